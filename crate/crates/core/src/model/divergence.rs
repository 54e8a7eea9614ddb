//! Output divergence between two checkpoints of the same model, measured on
//! seeded random token sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, ModelError, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceOptions {
    pub n_inputs: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        Self {
            n_inputs: 8,
            seq_len: 16,
            seed: 42,
        }
    }
}

/// Averages are taken over every token position of every input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub mean_cosine_similarity: f64,
    pub max_abs_logit_diff: f64,
    /// `KL(softmax(original) ‖ softmax(decomposed))` in nats.
    pub mean_kl: f64,
    pub n_inputs: usize,
    pub seed: u64,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn kl(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let d: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    d.max(0.0)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn logit_divergence(
    original: &Checkpoint,
    decomposed: &Checkpoint,
    opts: &DivergenceOptions,
) -> Result<DivergenceReport, ModelError> {
    if original.spec() != decomposed.spec() {
        return Err(ModelError::SpecMismatch {
            left: original.spec().name.clone(),
            right: decomposed.spec().name.clone(),
        });
    }
    if opts.n_inputs == 0 || opts.seq_len == 0 {
        return Err(ModelError::InvalidInput(
            "n_inputs and seq_len must be positive".into(),
        ));
    }
    let vocab = original.spec().vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tokens: Vec<Vec<usize>> = (0..opts.n_inputs)
        .map(|_| {
            (0..opts.seq_len)
                .map(|_| rng.random_range(0..vocab))
                .collect()
        })
        .collect();

    let a = ToyModel::from_checkpoint(original)?.forward(&tokens)?;
    let b = ToyModel::from_checkpoint(decomposed)?.forward(&tokens)?;

    let mut cos_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut max_abs: f64 = 0.0;
    let positions = opts.n_inputs * opts.seq_len;
    for (ra, rb) in a
        .data()
        .chunks_exact(vocab)
        .zip(b.data().chunks_exact(vocab))
    {
        cos_sum += cosine(ra, rb);
        kl_sum += kl(ra, rb);
        for (x, y) in ra.iter().zip(rb) {
            max_abs = max_abs.max((x - y).abs());
        }
    }
    Ok(DivergenceReport {
        mean_cosine_similarity: cos_sum / positions as f64,
        max_abs_logit_diff: max_abs,
        mean_kl: kl_sum / positions as f64,
        n_inputs: opts.n_inputs,
        seed: opts.seed,
    })
}
