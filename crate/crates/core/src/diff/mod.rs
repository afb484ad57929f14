//! From-scratch reverse-mode differentiation engine.
//!
//! A [`Tape`] records eager matrix primitives; [`Tape::grad`] emits adjoints
//! as further tape nodes, which is what makes second-order gradients
//! ([`Tape::grad2`]) possible without any dedicated Hessian code. All
//! arithmetic is f64; there is no broadcasting beyond scalar-tensor products
//! and row-vector bias addition, both built from explicit rank-1 matmuls.

pub mod compose;
pub mod fd;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use sparse::SparseSym;
pub use tape::{DiffError, Tape, Val};
pub use tensor::{ShapeError, Tensor};
