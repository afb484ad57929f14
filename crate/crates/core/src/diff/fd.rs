//! Finite-difference harness used by tests and `selfcheck`.
//!
//! All checks are central differences. The error measure divides by
//! max(1, |analytic|, |numeric|): for gradients of unit scale this is a true
//! relative error, while near-zero gradients are compared absolutely instead
//! of amplifying FD roundoff into a meaningless ratio.

use super::tensor::Tensor;

/// Central difference df/dx of a scalar-valued function, elementwise in x.
pub fn central_diff(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for k in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        out.data_mut()[k] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}

/// Floored relative error between two same-shape tensors.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert!(a.same_shape(b), "rel_err on mismatched shapes");
    let amax = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bmax = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / 1.0f64.max(amax).max(bmax)
}
