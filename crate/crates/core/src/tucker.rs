//! Tucker decomposition by higher-order orthogonal iteration (HOOI).
//!
//! Factor matrices are stored as `rᵢ × nᵢ` with orthonormal rows, so a tensor
//! is approximated as `Γ ×₁ U¹ ×₂ U² ×₃ U³` with the contraction running over
//! the factor rows, and the core is recovered as `T ×₁ (U¹)ᵀ ×₂ (U²)ᵀ ×₃ (U³)ᵀ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::svd::{
    orthonormalize_in_place, truncated_svd, truncated_svd_with, SvdError, SvdOptions,
};
use crate::tensor::{
    mode_product, unfold, Contraction, DenseTensor, FactorMatrix, Matrix, TensorError,
};

/// Below this relative error the norm identity loses too many digits to
/// cancellation, and the residual is computed by explicit reconstruction.
const NORM_IDENTITY_FLOOR: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuckerError {
    #[error("HOOI supports order-2 and order-3 tensors, got order {0}")]
    UnsupportedOrder(usize),
    #[error("expected {expected} ranks, got {got}")]
    RankCount { expected: usize, got: usize },
    #[error("rank {rank} for mode {mode} is outside 1..={dim}")]
    RankOutOfRange {
        mode: usize,
        rank: usize,
        dim: usize,
    },
    #[error("rank {rank} for mode {mode} exceeds {others}, the product of the other ranks")]
    InfeasibleRanks {
        mode: usize,
        rank: usize,
        others: usize,
    },
    #[error("tolerance must be finite and non-negative, got {0}")]
    InvalidTolerance(f64),
    #[error("max_iterations must be at least 1")]
    InvalidMaxIterations,
    #[error("SVD failed in iteration {iteration}, mode {mode}: {source}")]
    Svd {
        iteration: usize,
        mode: usize,
        #[source]
        source: SvdError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Core tensor plus one factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    core: DenseTensor,
    factors: Vec<FactorMatrix>,
    original_shape: Vec<usize>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<FactorMatrix>) -> Result<Self, TuckerError> {
        if core.order() != factors.len() {
            return Err(TuckerError::RankCount {
                expected: core.order(),
                got: factors.len(),
            });
        }
        for (mode, (f, r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.rank() != *r {
                return Err(TuckerError::RankOutOfRange {
                    mode,
                    rank: *r,
                    dim: f.rank(),
                });
            }
        }
        let original_shape = factors.iter().map(FactorMatrix::dim).collect();
        Ok(Self {
            core,
            factors,
            original_shape,
        })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn original_shape(&self) -> &[usize] {
        &self.original_shape
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    /// Stored scalars: the core plus every factor.
    pub fn param_count(&self) -> usize {
        self.core.len()
            + self
                .factors
                .iter()
                .map(|f| f.rank() * f.dim())
                .sum::<usize>()
    }

    /// The `(A, B, C)` matrices of an order-2 decomposition: `W ≈ A·B·C` with
    /// `A = (U¹)ᵀ` (H×PR), `B = Γ` (PR×PR), `C = U²` (PR×W).
    pub fn as_matrix_chain(&self) -> Option<(Matrix, Matrix, Matrix)> {
        if self.core.order() != 2 {
            return None;
        }
        Some((
            self.factors[0].matrix().transpose(),
            self.core.to_matrix().ok()?,
            self.factors[1].matrix().clone(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HooiReport {
    pub iterations: usize,
    pub relative_error: f64,
    pub converged: bool,
    pub error_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HooiInit {
    /// Leading left singular vectors of each unfolding.
    Hosvd,
    /// Seeded Gaussian matrices with orthonormalized rows.
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct HooiOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init: HooiInit,
    pub svd: SvdOptions,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 50,
            init: HooiInit::Hosvd,
            svd: SvdOptions::default(),
        }
    }
}

/// Expands a single pruned rank to every mode, clipped to each dimension.
pub fn uniform_ranks(shape: &[usize], pr: usize) -> Vec<usize> {
    shape.iter().map(|&n| pr.clamp(1, n)).collect()
}

pub fn hooi(
    t: &DenseTensor,
    ranks: &[usize],
    opts: &HooiOptions,
) -> Result<(TuckerFactors, HooiReport), TuckerError> {
    let order = t.order();
    if !(2..=3).contains(&order) {
        return Err(TuckerError::UnsupportedOrder(order));
    }
    if ranks.len() != order {
        return Err(TuckerError::RankCount {
            expected: order,
            got: ranks.len(),
        });
    }
    for (mode, (&r, &n)) in ranks.iter().zip(t.shape()).enumerate() {
        if r == 0 || r > n {
            return Err(TuckerError::RankOutOfRange {
                mode,
                rank: r,
                dim: n,
            });
        }
    }
    for (mode, &r) in ranks.iter().enumerate() {
        let others: usize = ranks
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != mode)
            .map(|(_, &q)| q)
            .product();
        if r > others {
            return Err(TuckerError::InfeasibleRanks {
                mode,
                rank: r,
                others,
            });
        }
    }
    if !opts.tolerance.is_finite() || opts.tolerance < 0.0 {
        return Err(TuckerError::InvalidTolerance(opts.tolerance));
    }
    if opts.max_iterations == 0 {
        return Err(TuckerError::InvalidMaxIterations);
    }

    let norm_t = t.frobenius_norm();
    if norm_t == 0.0 {
        let core = DenseTensor::zeros(ranks.to_vec())?;
        let factors = ranks
            .iter()
            .zip(t.shape())
            .map(|(&r, &n)| FactorMatrix::identity_prefix(r, n))
            .collect();
        return Ok((
            TuckerFactors::new(core, factors)?,
            HooiReport {
                iterations: 0,
                relative_error: 0.0,
                converged: true,
                error_history: vec![0.0],
            },
        ));
    }

    let mut factors = initial_factors(t, ranks, opts)?;
    let mut history = Vec::new();
    let mut core = t.clone();
    let mut rel = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations && rel > opts.tolerance {
        for mode in 0..order {
            let projected = project_all_but(t, &factors, mode)?;
            let svd = truncated_svd_with(&unfold(&projected, mode)?, ranks[mode], &opts.svd)
                .map_err(|source| TuckerError::Svd {
                    iteration: iterations + 1,
                    mode,
                    source,
                })?;
            factors[mode] = FactorMatrix::new(svd.left.transpose())?;
            if mode == order - 1 {
                core = mode_product(&projected, factors[mode].matrix(), mode, Contraction::Cols)?;
            }
        }
        iterations += 1;

        let gap = (norm_t * norm_t - core.frobenius_norm().powi(2)).max(0.0);
        rel = gap.sqrt() / norm_t;
        if rel < NORM_IDENTITY_FLOOR {
            let candidate = TuckerFactors::new(core.clone(), factors.clone())?;
            rel = relative_error(t, &candidate)?;
        }
        history.push(rel);
    }

    let report = HooiReport {
        iterations,
        relative_error: rel,
        converged: rel <= opts.tolerance,
        error_history: history,
    };
    Ok((TuckerFactors::new(core, factors)?, report))
}

fn initial_factors(
    t: &DenseTensor,
    ranks: &[usize],
    opts: &HooiOptions,
) -> Result<Vec<FactorMatrix>, TuckerError> {
    match opts.init {
        HooiInit::Hosvd => ranks
            .iter()
            .enumerate()
            .map(|(mode, &r)| {
                let svd =
                    truncated_svd_with(&unfold(t, mode)?, r, &opts.svd).map_err(|source| {
                        TuckerError::Svd {
                            iteration: 0,
                            mode,
                            source,
                        }
                    })?;
                Ok(FactorMatrix::new(svd.left.transpose())?)
            })
            .collect(),
        HooiInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ranks
                .iter()
                .zip(t.shape())
                .map(|(&r, &n)| {
                    let mut rows: Vec<Vec<f64>> = (0..r)
                        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .collect();
                    orthonormalize_in_place(&mut rows, n);
                    Ok(FactorMatrix::new(Matrix::from_rows(&rows))?)
                })
                .collect()
        }
    }
}

/// `T ×ⱼ (Uʲ)ᵀ` for every mode `j ≠ skip`.
fn project_all_but(
    t: &DenseTensor,
    factors: &[FactorMatrix],
    skip: usize,
) -> Result<DenseTensor, TensorError> {
    let mut out = t.clone();
    for (mode, f) in factors.iter().enumerate() {
        if mode != skip {
            out = mode_product(&out, f.matrix(), mode, Contraction::Cols)?;
        }
    }
    Ok(out)
}

/// Order-2 Tucker decomposition of a weight matrix at pruned rank `pr`.
///
/// Order-2 HOOI reaches its fixed point in one step, so this goes straight to the
/// rank-`pr` truncated SVD: `A = U_k`, `B = diag(σ)`, `C = V_kᵀ`.
pub fn tucker2d(w: &Matrix, pr: usize) -> Result<TuckerFactors, TuckerError> {
    let max = w.rows().min(w.cols());
    if pr == 0 || pr > max {
        let mode = usize::from(w.cols() < w.rows());
        return Err(TuckerError::RankOutOfRange {
            mode,
            rank: pr,
            dim: max,
        });
    }
    let svd = truncated_svd(w, pr).map_err(|source| TuckerError::Svd {
        iteration: 0,
        mode: 0,
        source,
    })?;
    let core = Matrix::diag(&svd.singular_values).into_tensor();
    let factors = vec![
        FactorMatrix::new(svd.left.transpose())?,
        FactorMatrix::new(svd.right.transpose())?,
    ];
    TuckerFactors::new(core, factors)
}

/// `Γ ×₁ U¹ ×₂ U² …` back to the original shape.
pub fn reconstruct(f: &TuckerFactors) -> DenseTensor {
    let mut out = f.core.clone();
    for (mode, u) in f.factors.iter().enumerate() {
        out = mode_product(&out, u.matrix(), mode, Contraction::Rows)
            .expect("factor shapes are validated at construction");
    }
    out
}

/// `‖t − reconstruct(f)‖ / ‖t‖`; zero when `t` is the zero tensor.
pub fn relative_error(t: &DenseTensor, f: &TuckerFactors) -> Result<f64, TensorError> {
    let norm_t = t.frobenius_norm();
    let diff = t.sub(&reconstruct(f))?;
    if norm_t == 0.0 {
        return Ok(0.0);
    }
    Ok(diff.frobenius_norm() / norm_t)
}
