//! Backbone classifiers and the learned adjacency generator.
//!
//! All forwards are recorded on a [`Tape`], so the same code serves training,
//! inference, and the gradient-of-gradient paths in the matching engine.
//! Propagation accepts a sparse constant operator (data graphs), a traced
//! dense operator (synthetic graphs being learned), or identity
//! (propagation-free protocols).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Tape, Tensor, Val};
use crate::graph::adjacency::NormalizedAdjacency;
use crate::graph::io::{MatrixJson, PhiJson};
use crate::rng::{stream, tag};

pub const DEFAULT_GCN_HIDDEN: usize = 64;
pub const DEFAULT_ADJGEN_HIDDEN: usize = 128;
pub const DEFAULT_SGC_POWER: usize = 2;

/// Propagation operator for a forward pass.
#[derive(Clone, Copy)]
pub enum AdjRef<'a> {
    Sparse(&'a NormalizedAdjacency),
    /// Already-normalized dense operator living on the tape.
    Dense(Val),
    Identity,
}

impl AdjRef<'_> {
    fn apply(&self, tape: &mut Tape, x: Val) -> Result<Val, DiffError> {
        match self {
            AdjRef::Sparse(a) => {
                let m = a.register(tape);
                tape.sparse_matmul(m, x)
            }
            AdjRef::Dense(a) => tape.matmul(*a, x),
            AdjRef::Identity => Ok(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    UniformGlorot,
    NormalKaiming,
}

/// Distribution over parameter initializations; each draw index opens an
/// independent deterministic stream.
#[derive(Debug, Clone, Copy)]
pub struct InitDistribution {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitDistribution {
    pub fn rng(&self, draw: u64) -> ChaCha8Rng {
        stream(self.seed, tag::THETA ^ (draw << 16))
    }

    pub fn matrix(&self, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(rows, cols);
        match self.kind {
            InitKind::UniformGlorot => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            InitKind::NormalKaiming => {
                let std = (2.0 / rows as f64).sqrt();
                for v in t.data_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = std * z;
                }
            }
        }
        t
    }
}

// ─── two-layer GCN / MLP ───

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w1: Tensor,
    pub w2: Tensor,
    /// Present only when the bias knob is on; biases then join the matched
    /// gradient set.
    pub b1: Option<Tensor>,
    pub b2: Option<Tensor>,
}

/// Tape handles for a parameter set, in matched-gradient order.
#[derive(Debug, Clone)]
pub struct PlacedParams {
    pub vars: Vec<Val>,
}

impl GcnParams {
    pub fn sample(
        dist: &InitDistribution,
        in_dim: usize,
        hidden: usize,
        classes: usize,
        use_bias: bool,
        draw: u64,
    ) -> Self {
        let mut rng = dist.rng(draw);
        let w1 = dist.matrix(in_dim, hidden, &mut rng);
        let w2 = dist.matrix(hidden, classes, &mut rng);
        let (b1, b2) = if use_bias {
            (Some(Tensor::zeros(1, hidden)), Some(Tensor::zeros(1, classes)))
        } else {
            (None, None)
        };
        GcnParams { w1, w2, b1, b2 }
    }

    /// Record the parameters as tape leaves, trainable or frozen.
    pub fn place(&self, tape: &mut Tape, trainable: bool) -> PlacedParams {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut vars = vec![put(&self.w1)];
        if let Some(b1) = &self.b1 {
            vars.push(put(b1));
        }
        vars.push(put(&self.w2));
        if let Some(b2) = &self.b2 {
            vars.push(put(b2));
        }
        PlacedParams { vars }
    }

    pub fn from_values(&self, values: Vec<Tensor>) -> GcnParams {
        let mut it = values.into_iter();
        let w1 = it.next().unwrap();
        let b1 = self.b1.as_ref().map(|_| it.next().unwrap());
        let w2 = it.next().unwrap();
        let b2 = self.b2.as_ref().map(|_| it.next().unwrap());
        GcnParams { w1, w2, b1, b2 }
    }

    pub fn has_bias(&self) -> bool {
        self.b1.is_some()
    }
}

/// Two-layer graph convolution: A @ relu(A @ X @ W1) @ W2, logits out.
pub fn gcn_forward(
    tape: &mut Tape,
    adj: AdjRef,
    x: Val,
    p: &PlacedParams,
    has_bias: bool,
) -> Result<Val, DiffError> {
    let mut idx = 0;
    let mut next = || {
        let v = p.vars[idx];
        idx += 1;
        v
    };
    let w1 = next();
    let b1 = if has_bias { Some(next()) } else { None };
    let w2 = next();
    let b2 = if has_bias { Some(next()) } else { None };

    let px = adj.apply(tape, x)?;
    let mut h = tape.matmul(px, w1)?;
    if let Some(b) = b1 {
        h = tape.add_bias(h, b)?;
    }
    let h = tape.relu(h)?;
    let ph = adj.apply(tape, h)?;
    let mut out = tape.matmul(ph, w2)?;
    if let Some(b) = b2 {
        out = tape.add_bias(out, b)?;
    }
    Ok(out)
}

/// Propagation-free two-layer perceptron on the same parameter shapes.
pub fn mlp_forward(
    tape: &mut Tape,
    x: Val,
    p: &PlacedParams,
    has_bias: bool,
) -> Result<Val, DiffError> {
    gcn_forward(tape, AdjRef::Identity, x, p, has_bias)
}

// ─── simplified graph convolution ───

#[derive(Debug, Clone, PartialEq)]
pub struct SgcParams {
    pub w: Tensor,
    pub power: usize,
}

impl SgcParams {
    pub fn sample(
        dist: &InitDistribution,
        in_dim: usize,
        classes: usize,
        power: usize,
        draw: u64,
    ) -> Self {
        let mut rng = dist.rng(draw);
        SgcParams { w: dist.matrix(in_dim, classes, &mut rng), power }
    }

    pub fn place(&self, tape: &mut Tape, trainable: bool) -> PlacedParams {
        let w = if trainable {
            tape.var(self.w.clone())
        } else {
            tape.constant(self.w.clone())
        };
        PlacedParams { vars: vec![w] }
    }
}

/// Linear model over k-step propagated features: A^k @ X @ W.
pub fn sgc_forward(
    tape: &mut Tape,
    adj: AdjRef,
    x: Val,
    p: &PlacedParams,
    power: usize,
) -> Result<Val, DiffError> {
    let mut h = x;
    for _ in 0..power {
        h = adj.apply(tape, h)?;
    }
    tape.matmul(h, p.vars[0])
}

// ─── adjacency generator ───

/// Pairwise MLP whose symmetrized, squashed scores form the synthetic
/// adjacency: entry (i, j) is sigmoid of the average of score(x_i ; x_j) and
/// score(x_j ; x_i); the diagonal is forced to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjGenParams {
    pub w1: Tensor, // 2d x hidden
    pub b1: Tensor, // 1 x hidden
    pub w2: Tensor, // hidden x 1
    pub b2: Tensor, // 1 x 1
}

impl AdjGenParams {
    pub fn sample(dist: &InitDistribution, feature_dim: usize, hidden: usize, draw: u64) -> Self {
        let mut rng = dist.rng(draw ^ 0x5eed_ad7a);
        AdjGenParams {
            w1: dist.matrix(2 * feature_dim, hidden, &mut rng),
            b1: Tensor::zeros(1, hidden),
            w2: dist.matrix(hidden, 1, &mut rng),
            b2: Tensor::zeros(1, 1),
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        AdjGenParams {
            w1: Tensor::zeros(2 * feature_dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, 1),
            b2: Tensor::zeros(1, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn place(&self, tape: &mut Tape, trainable: bool) -> PlacedParams {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        PlacedParams { vars: vec![put(&self.w1), put(&self.b1), put(&self.w2), put(&self.b2)] }
    }

    pub fn from_values(values: Vec<Tensor>) -> AdjGenParams {
        let mut it = values.into_iter();
        AdjGenParams {
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
        }
    }

    pub fn to_json(&self) -> PhiJson {
        PhiJson {
            hidden: self.hidden(),
            w1: MatrixJson::from_tensor(&self.w1),
            b1: MatrixJson::from_tensor(&self.b1),
            w2: MatrixJson::from_tensor(&self.w2),
            b2: MatrixJson::from_tensor(&self.b2),
        }
    }

    pub fn from_json(j: &PhiJson) -> Result<Self, crate::graph::GraphError> {
        Ok(AdjGenParams {
            w1: j.w1.to_tensor()?,
            b1: j.b1.to_tensor()?,
            w2: j.w2.to_tensor()?,
            b2: j.b2.to_tensor()?,
        })
    }
}

/// Traced synthetic adjacency from features: dense, symmetric (bit-exactly),
/// entries in [0, 1], unit diagonal.
pub fn adjgen_forward(tape: &mut Tape, x: Val, phi: &PlacedParams) -> Result<Val, DiffError> {
    let n = tape.value(x).rows();
    let (w1, b1, w2, b2) = (phi.vars[0], phi.vars[1], phi.vars[2], phi.vars[3]);

    let mut left_idx = Vec::with_capacity(n * n);
    let mut right_idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            left_idx.push(i);
            right_idx.push(j);
        }
    }
    let xi = tape.gather_rows(x, &left_idx)?;
    let xj = tape.gather_rows(x, &right_idx)?;
    let pairs = tape.concat_cols(&[xi, xj])?;
    let h0 = tape.matmul(pairs, w1)?;
    let h1 = tape.add_bias(h0, b1)?;
    let h = tape.relu(h1)?;
    let s0 = tape.matmul(h, w2)?;
    let scores = tape.add_bias(s0, b2)?;
    let grid = tape.reshape(scores, n, n)?;
    let gt = tape.transpose(grid)?;
    let sum = tape.add(grid, gt)?;
    let sym = tape.scale(sum, 0.5)?;
    let squashed = tape.sigmoid(sym)?;

    // zero the diagonal lane and re-insert exact ones
    let mut off = Tensor::ones(n, n);
    for i in 0..n {
        off.set(i, i, 0.0);
    }
    let offc = tape.constant(off);
    let eye = tape.constant(Tensor::eye(n));
    let masked = tape.mul(squashed, offc)?;
    tape.add(masked, eye)
}

/// Plain-value adjacency generation for saving and evaluation.
pub fn adjgen_eval(x: &Tensor, phi: &AdjGenParams) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = phi.place(&mut tape, false);
    let a = adjgen_forward(&mut tape, xv, &pv).expect("generator shapes are consistent");
    tape.value(a).clone()
}

/// Drop entries below the threshold; saving and evaluation see this matrix,
/// training always flows through the continuous one.
pub fn sparsify(a: &Tensor, delta: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|&v| if v >= delta { v } else { 0.0 })
        .collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}
