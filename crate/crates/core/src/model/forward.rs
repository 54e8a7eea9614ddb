//! Llama-style forward pass at toy scale.
//!
//! Per layer: RMSNorm, Q/K/V projections, softmax attention, output projection
//! and residual; then RMSNorm, SiLU-gated MLP and residual. Attention is
//! bidirectional and there is no positional encoding or KV cache. Factored
//! weights are applied as `((x·A)·B)·C`, never multiplied out.

use rayon::prelude::*;

use super::checkpoint::dense_name;
use super::{Checkpoint, ModelError, ModelSpec};
use crate::tensor::{DenseTensor, Matrix};

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Linear {
    Dense(Matrix),
    Factored(Matrix, Matrix, Matrix),
}

impl Linear {
    fn apply(&self, x: &Matrix) -> Matrix {
        let r = match self {
            Linear::Dense(w) => x.matmul(w),
            Linear::Factored(a, b, c) => x
                .matmul(a)
                .and_then(|y| y.matmul(b))
                .and_then(|y| y.matmul(c)),
        };
        r.expect("shapes checked when the model was built")
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn_norm: Vec<f64>,
    mlp_norm: Vec<f64>,
    /// Indexed like the Llama roles: Q, K, V, SO, G, U, D.
    proj: Vec<Linear>,
}

/// Weights of a checkpoint unpacked into matrices, ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct ToyModel {
    spec: ModelSpec,
    embed: Matrix,
    lm_head: Matrix,
    final_norm: Vec<f64>,
    layers: Vec<Layer>,
    kv_heads: usize,
}

const ROLES: [&str; 7] = ["W_Q", "W_K", "W_V", "W_SO", "W_G", "W_U", "W_D"];

fn fetch<'a>(ckpt: &'a Checkpoint, name: &str) -> Result<&'a DenseTensor, ModelError> {
    ckpt.get(name)
        .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
}

fn matrix(t: &DenseTensor) -> Matrix {
    t.to_matrix().expect("weights are order 2")
}

impl ToyModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let spec = ckpt.spec().clone();
        let names: Vec<&str> = spec.roles.iter().map(|r| r.name.as_str()).collect();
        if names != ROLES {
            return Err(ModelError::Unsupported(format!(
                "the forward pass needs the Llama role layout {ROLES:?}, {} has {names:?}",
                spec.name
            )));
        }
        ckpt.check_layout()?;
        let head_dim = spec.head_dim();
        let kv_dim = spec.roles[1].cols;
        if !kv_dim.is_multiple_of(head_dim) || !spec.n_heads.is_multiple_of(kv_dim / head_dim) {
            return Err(ModelError::InvalidSpec(format!(
                "key/value width {kv_dim} does not split into groups of {head_dim}-wide heads"
            )));
        }
        let mut layers = Vec::with_capacity(spec.n_layers);
        for l in 0..spec.n_layers {
            let mut proj = Vec::with_capacity(ROLES.len());
            for role in ROLES {
                let lin = match ckpt.factors(l, role) {
                    Some((a, b, c)) => Linear::Factored(matrix(a), matrix(b), matrix(c)),
                    None => Linear::Dense(matrix(fetch(ckpt, &dense_name(l, role))?)),
                };
                proj.push(lin);
            }
            layers.push(Layer {
                attn_norm: fetch(ckpt, &format!("layer.{l}.attn_norm"))?
                    .data()
                    .to_vec(),
                mlp_norm: fetch(ckpt, &format!("layer.{l}.mlp_norm"))?.data().to_vec(),
                proj,
            });
        }
        Ok(Self {
            embed: matrix(fetch(ckpt, "embed")?),
            lm_head: matrix(fetch(ckpt, "lm_head")?),
            final_norm: fetch(ckpt, "final_norm")?.data().to_vec(),
            layers,
            kv_heads: kv_dim / head_dim,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Logits (`seq × vocab`) for one token sequence.
    pub fn forward_sequence(&self, tokens: &[usize]) -> Result<Matrix, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::InvalidInput("empty token sequence".into()));
        }
        let h = self.spec.hidden;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.spec.vocab) {
            return Err(ModelError::InvalidInput(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.spec.vocab
            )));
        }
        let mut x = Matrix::from_fn(tokens.len(), h, |i, j| self.embed.get(tokens[i], j));
        for layer in &self.layers {
            let n = rms_norm(&x, &layer.attn_norm);
            let q = layer.proj[0].apply(&n);
            let k = layer.proj[1].apply(&n);
            let v = layer.proj[2].apply(&n);
            let attn = self.attention(&q, &k, &v);
            x = x.add(&layer.proj[3].apply(&attn)).expect("residual shapes");

            let n = rms_norm(&x, &layer.mlp_norm);
            let g = layer.proj[4].apply(&n);
            let u = layer.proj[5].apply(&n);
            let gated = Matrix::from_fn(g.rows(), g.cols(), |i, j| silu(g.get(i, j)) * u.get(i, j));
            x = x
                .add(&layer.proj[6].apply(&gated))
                .expect("residual shapes");
        }
        let n = rms_norm(&x, &self.final_norm);
        Ok(n.matmul(&self.lm_head).expect("head shape"))
    }

    fn attention(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let d = self.spec.head_dim();
        let group = self.spec.n_heads / self.kv_heads;
        let seq = q.rows();
        let mut out = Matrix::zeros(seq, self.spec.hidden);
        for head in 0..self.spec.n_heads {
            let kv = head / group;
            let qh = Matrix::from_fn(seq, d, |i, j| q.get(i, head * d + j));
            let kh = Matrix::from_fn(seq, d, |i, j| k.get(i, kv * d + j));
            let vh = Matrix::from_fn(seq, d, |i, j| v.get(i, kv * d + j));
            let p = attention_probs(&qh, &kh);
            let o = p.matmul(&vh).expect("head shapes");
            for i in 0..seq {
                for j in 0..d {
                    out.set(i, head * d + j, o.get(i, j));
                }
            }
        }
        out
    }

    /// Logits `batch × seq × vocab`; sequences run in parallel.
    pub fn forward(&self, tokens: &[Vec<usize>]) -> Result<DenseTensor, ModelError> {
        let seq = tokens.first().map(Vec::len).unwrap_or(0);
        if tokens.is_empty() || tokens.iter().any(|t| t.len() != seq) {
            return Err(ModelError::InvalidInput(
                "token batch must be non-empty with equal-length sequences".into(),
            ));
        }
        let per_seq: Vec<Matrix> = tokens
            .par_iter()
            .map(|t| self.forward_sequence(t))
            .collect::<Result<_, _>>()?;
        let data = per_seq.into_iter().flat_map(Matrix::into_data).collect();
        Ok(
            DenseTensor::new(vec![tokens.len(), seq, self.spec.vocab], data)
                .expect("consistent shape"),
        )
    }
}

/// Logits for a batch of token sequences.
pub fn toy_forward(ckpt: &Checkpoint, tokens: &[Vec<usize>]) -> Result<DenseTensor, ModelError> {
    ToyModel::from_checkpoint(ckpt)?.forward(tokens)
}

fn rms_norm(x: &Matrix, gain: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        for (j, v) in row.iter().enumerate() {
            out.set(i, j, v * inv * gain[j]);
        }
    }
    out
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Row-wise `softmax(q·kᵀ / √d)`.
pub(crate) fn attention_probs(q: &Matrix, k: &Matrix) -> Matrix {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut s = q.matmul(&k.transpose()).expect("head shapes").scale(scale);
    for i in 0..s.rows() {
        let max = s.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..s.cols() {
            let e = (s.get(i, j) - max).exp();
            s.set(i, j, e);
            sum += e;
        }
        for j in 0..s.cols() {
            s.set(i, j, s.get(i, j) / sum);
        }
    }
    s
}
