//! Encoders, projection head, cosine critic, Adam and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};

/// Mean slope of RReLU with bounds (1/8, 1/3).
pub const RRELU_EVAL_SLOPE: f64 = (1.0 / 8.0 + 1.0 / 3.0) / 2.0;

const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Leaky ReLU with one learned slope per layer.
    Prelu,
    /// RReLU in its deterministic form (fixed mean slope).
    Rrelu,
    Elu,
    /// Identity. Only useful for tests and linear probes of the operator.
    Linear,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prelu" => Ok(Self::Prelu),
            "rrelu" => Ok(Self::Rrelu),
            "elu" => Ok(Self::Elu),
            "linear" | "identity" => Ok(Self::Linear),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Two graph convolutions with symmetric normalization.
    Gcn2,
    /// Three mean-aggregation layers over `[mean(N(v)); h_v]`.
    SageGcn3,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gcn2" | "gcn" => Ok(Self::Gcn2),
            "sage_gcn3" | "sage" => Ok(Self::SageGcn3),
            other => Err(Error::config(format!("unknown encoder {other:?}"))),
        }
    }
}

/// Glorot-uniform `rows x cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub kind: EncoderKind,
    pub activation: Activation,
    pub weights: Vec<Tensor>,
    /// One `1 x 1` slope per layer; empty unless the activation is PReLU.
    pub slopes: Vec<Tensor>,
}

impl EncoderParams {
    pub fn init(
        kind: EncoderKind,
        activation: Activation,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let layers = match kind {
            EncoderKind::Gcn2 => 2,
            EncoderKind::SageGcn3 => 3,
        };
        let mut weights = Vec::with_capacity(layers);
        let mut d = in_dim;
        for _ in 0..layers {
            let fan_in = match kind {
                EncoderKind::Gcn2 => d,
                EncoderKind::SageGcn3 => 2 * d,
            };
            weights.push(Tensor::new(glorot(fan_in, hidden_dim, rng), true));
            d = hidden_dim;
        }
        let slopes = if activation == Activation::Prelu {
            (0..layers).map(|_| Tensor::new(Matrix::filled(1, 1, PRELU_INIT), true)).collect()
        } else {
            Vec::new()
        };
        Self { kind, activation, weights, slopes }
    }

    pub fn in_dim(&self) -> usize {
        let r = self.weights[0].value.rows();
        match self.kind {
            EncoderKind::Gcn2 => r,
            EncoderKind::SageGcn3 => r / 2,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.value.cols())
    }
}

/// Two-layer perceptron `W2 elu(W1 z + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ProjectionParams {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            w1: Tensor::new(glorot(in_dim, hidden, rng), true),
            b1: Tensor::new(Matrix::zeros(1, hidden), true),
            w2: Tensor::new(glorot(hidden, out_dim, rng), true),
            b2: Tensor::new(Matrix::zeros(1, out_dim), true),
        }
    }

    /// Identity map on `dim` features (`elu` is the identity on the
    /// positive shift used here, so the head reduces to `z`). Frozen.
    pub fn identity(dim: usize) -> Self {
        // W1 = I, b1 = c with c large enough that every pre-activation is
        // positive for the inputs the tests use, W2 = I, b2 = -c.
        let c = 1e3;
        Self {
            w1: Tensor::new(Matrix::identity(dim), false),
            b1: Tensor::new(Matrix::filled(1, dim, c), false),
            w2: Tensor::new(Matrix::identity(dim), false),
            b2: Tensor::new(Matrix::filled(1, dim, -c), false),
        }
    }

    /// Applies the head to one vector without a tape.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let zm = Matrix::from_vec(1, z.len(), z.to_vec())?;
        let mut h = zm.matmul(&self.w1.value)?;
        for (x, b) in h.data_mut().iter_mut().zip(self.b1.value.data()) {
            *x += b;
            if *x <= 0.0 {
                *x = x.exp_m1();
            }
        }
        let mut o = h.matmul(&self.w2.value)?;
        for (x, b) in o.data_mut().iter_mut().zip(self.b2.value.data()) {
            *x += b;
        }
        Ok(o.into_data())
    }
}

static ZERO_NORM_CRITIC: AtomicU64 = AtomicU64::new(0);

/// Number of [`critic`] calls that hit a zero-norm projection.
pub fn zero_norm_critic_events() -> u64 {
    ZERO_NORM_CRITIC.load(Ordering::Relaxed)
}

/// Cosine similarity of two vectors; 0 if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = crate::linalg::norm(a);
    let nb = crate::linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        ZERO_NORM_CRITIC.fetch_add(1, Ordering::Relaxed);
        return 0.0;
    }
    crate::linalg::dot(a, b) / (na * nb)
}

/// `s(g(u), g(v))`: cosine similarity after the projection head.
pub fn critic(u: &[f64], v: &[f64], proj: &ProjectionParams) -> Result<f64> {
    Ok(cosine(&proj.apply(u)?, &proj.apply(v)?))
}

/// Encoder plus projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
}

/// Tape handles for every tensor of a [`Model`], in [`Model::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Graph operators an encoder consumes, precomputed once per graph.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub operator: Arc<CsrMatrix>,
    pub features: Matrix,
}

impl Model {
    pub fn init(
        kind: EncoderKind,
        activation: Activation,
        in_dim: usize,
        hidden_dim: usize,
        proj_dim: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let encoder = EncoderParams::init(kind, activation, in_dim, hidden_dim, rng);
        let projection = ProjectionParams::init(hidden_dim, proj_dim, hidden_dim, rng);
        Self { encoder, projection }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, w) in self.encoder.weights.iter().enumerate() {
            out.push((format!("encoder.w{i}"), w));
        }
        for (i, s) in self.encoder.slopes.iter().enumerate() {
            out.push((format!("encoder.slope{i}"), s));
        }
        let p = &self.projection;
        out.push(("proj.w1".into(), &p.w1));
        out.push(("proj.b1".into(), &p.b1));
        out.push(("proj.w2".into(), &p.w2));
        out.push(("proj.b2".into(), &p.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.encoder.weights.iter_mut());
        out.extend(self.encoder.slopes.iter_mut());
        let p = &mut self.projection;
        out.push(&mut p.w1);
        out.push(&mut p.b1);
        out.push(&mut p.w2);
        out.push(&mut p.b2);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars = self.tensors().into_iter().map(|(_, t)| tape.tensor(t)).collect();
        BoundModel { vars }
    }

    fn n_weights(&self) -> usize {
        self.encoder.weights.len()
    }

    fn activate(&self, tape: &mut Tape, bound: &BoundModel, x: Var, layer: usize) -> Result<Var> {
        Ok(match self.encoder.activation {
            Activation::Prelu => tape.prelu(x, bound.vars[self.n_weights() + layer])?,
            Activation::Rrelu => tape.leaky_relu(x, RRELU_EVAL_SLOPE),
            Activation::Elu => tape.elu(x),
            Activation::Linear => x,
        })
    }

    /// Encoder forward pass. `input.operator` must be the symmetric
    /// normalized operator for `Gcn2` and the mean operator for `SageGcn3`.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundModel, input: &EncoderInput) -> Result<Var> {
        if input.features.cols() != self.encoder.in_dim() {
            return Err(Error::dim(format!(
                "encoder expects {} features, graph has {}",
                self.encoder.in_dim(),
                input.features.cols()
            )));
        }
        if input.operator.rows() != input.features.rows() {
            return Err(Error::dim("operator and feature row counts differ"));
        }
        let mut h = tape.constant(input.features.clone());
        for layer in 0..self.n_weights() {
            let w = bound.vars[layer];
            let pre = match self.encoder.kind {
                EncoderKind::Gcn2 => {
                    let hw = tape.matmul(h, w)?;
                    tape.spmm(input.operator.clone(), hw)?
                }
                EncoderKind::SageGcn3 => {
                    let agg = tape.spmm(input.operator.clone(), h)?;
                    let cat = tape.hconcat(agg, h)?;
                    tape.matmul(cat, w)?
                }
            };
            h = self.activate(tape, bound, pre, layer)?;
        }
        Ok(h)
    }

    /// Projection head on every row of `z`.
    pub fn project(&self, tape: &mut Tape, bound: &BoundModel, z: Var) -> Result<Var> {
        let k = self.n_weights() + self.encoder.slopes.len();
        let (w1, b1, w2, b2) = (bound.vars[k], bound.vars[k + 1], bound.vars[k + 2], bound.vars[k + 3]);
        let h = tape.matmul(z, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.elu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }

    /// Writes gradients for every tensor, resetting previous values.
    pub fn assign_grads(&mut self, bound: &BoundModel, grads: &Gradients) {
        let mut ts = self.tensors_mut();
        grads.assign(&bound.vars, &mut ts);
    }

    /// Embeddings of `input` without building gradients.
    pub fn embed(&self, input: &EncoderInput) -> Result<Matrix> {
        let mut tape = Tape::new();
        let frozen = self.frozen();
        let bound = frozen.bind(&mut tape);
        let z = frozen.encode(&mut tape, &bound, input)?;
        Ok(tape.value(z).clone())
    }

    fn frozen(&self) -> Self {
        let mut m = self.clone();
        for t in m.tensors_mut() {
            t.requires_grad = false;
        }
        m
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers = self
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let (r, c) = t.shape();
                (name, LayerRecord { shape: [r, c], values: t.value.data().to_vec() })
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            encoder: self.encoder.kind,
            activation: self.encoder.activation,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", ck.version)));
        }
        let get = |name: &str| -> Result<Tensor> {
            let rec = ck
                .layers
                .get(name)
                .ok_or_else(|| Error::Parse(format!("checkpoint missing {name}")))?;
            Ok(Tensor::new(Matrix::from_vec(rec.shape[0], rec.shape[1], rec.values.clone())?, true))
        };
        let layers = match ck.encoder {
            EncoderKind::Gcn2 => 2,
            EncoderKind::SageGcn3 => 3,
        };
        let weights = (0..layers).map(|i| get(&format!("encoder.w{i}"))).collect::<Result<_>>()?;
        let slopes = if ck.activation == Activation::Prelu {
            (0..layers).map(|i| get(&format!("encoder.slope{i}"))).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            encoder: EncoderParams { kind: ck.encoder, activation: ck.activation, weights, slopes },
            projection: ProjectionParams {
                w1: get("proj.w1")?,
                b1: get("proj.b1")?,
                w2: get("proj.w2")?,
                b2: get("proj.b2")?,
            },
        })
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// JSON checkpoint: layer name to shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderKind,
    pub activation: Activation,
    pub layers: BTreeMap<String, LayerRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Adam with a classic L2 term added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: Vec<(Matrix, Matrix)>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, state: Vec::new(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over `params`, using each tensor's `grad` (missing
    /// gradients count as zero). The parameter list must keep the same
    /// order and shapes across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|p| {
                    let (r, c) = p.shape();
                    (Matrix::zeros(r, c), Matrix::zeros(r, c))
                })
                .collect();
        }
        if self.state.len() != params.len() {
            return Err(Error::dim("optimizer parameter count changed"));
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (p, (m, v)) in params.iter_mut().zip(self.state.iter_mut()) {
            if !p.requires_grad {
                continue;
            }
            if m.shape() != p.shape() {
                return Err(Error::dim("optimizer state shape mismatch"));
            }
            let zero;
            let g = match &p.grad {
                Some(g) if g.shape() == p.shape() => g,
                Some(_) => return Err(Error::dim("gradient shape mismatch")),
                None => {
                    zero = Matrix::zeros(p.value.rows(), p.value.cols());
                    &zero
                }
            };
            let g = g.clone();
            let vals = p.value.data_mut();
            for (k, x) in vals.iter_mut().enumerate() {
                let gk = g.data()[k] + self.weight_decay * *x;
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data()[k] / bc1;
                let vhat = v.data()[k] / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
