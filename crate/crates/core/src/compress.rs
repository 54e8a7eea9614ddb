//! Parameter, MAC, operational-intensity and roofline accounting.
//!
//! Counting convention: every weight-bearing matrix multiply (the per-layer
//! projections and, for decoder models, the LM head) plus the two attention
//! batched multiplies per layer (`Q·Kᵀ` and `softmax·V`). Embedding lookups,
//! normalization, softmax and activations are not counted. DRAM traffic is
//! modeled as streaming every weight once per forward pass, so operational
//! intensity coincides with the compute-to-model-size ratio.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::{validate, DecompConfig, Violation};
use crate::model::ModelSpec;
use crate::precision::Precision;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("pruned rank {pr} is outside 1..={max}")]
    PrOutOfRange { pr: u64, max: u64 },
    #[error("matrix dimensions must be positive, got {h}x{w}")]
    ZeroDimension { h: u64, w: u64 },
    #[error("batch_rows must be at least 1")]
    ZeroBatch,
    #[error("invalid decomposition config: {}", join_violations(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("invalid hardware spec: {0}")]
    InvalidHardware(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub params_before: u64,
    pub params_after: u64,
    pub compression_ratio: f64,
    pub reduction_fraction: f64,
}

impl CompressionStats {
    pub fn from_counts(before: u64, after: u64) -> Self {
        Self {
            params_before: before,
            params_after: after,
            compression_ratio: before as f64 / after as f64,
            reduction_fraction: 1.0 - after as f64 / before as f64,
        }
    }
}

/// `H·PR + PR² + PR·W`, the stored size of the `(A, B, C)` factorization.
pub fn factored_params(h: u64, w: u64, pr: u64) -> u64 {
    h * pr + pr * pr + pr * w
}

fn check_dims(h: u64, w: u64, pr: u64) -> Result<(), CompressError> {
    if h == 0 || w == 0 {
        return Err(CompressError::ZeroDimension { h, w });
    }
    let max = h.min(w);
    if pr == 0 || pr > max {
        return Err(CompressError::PrOutOfRange { pr, max });
    }
    Ok(())
}

pub fn compression_stats(h: u64, w: u64, pr: u64) -> Result<CompressionStats, CompressError> {
    check_dims(h, w, pr)?;
    Ok(CompressionStats::from_counts(
        h * w,
        factored_params(h, w, pr),
    ))
}

/// Real root of `PR² + (H+W)·PR − H·W = 0`; compression requires `PR` strictly below it.
pub fn pr_bound_closed_form(h: u64, w: u64) -> f64 {
    let (h, w) = (h as f64, w as f64);
    (((h + w).powi(2) + 4.0 * h * w).sqrt() - (h + w)) / 2.0
}

/// Largest integer pruned rank that still compresses an `h × w` weight, or 0 if none does.
pub fn pr_upper_bound(h: u64, w: u64) -> u64 {
    let compresses = |pr: u64| {
        let (h, w, pr) = (h as u128, w as u128, pr as u128);
        pr * pr + (h + w) * pr < h * w
    };
    let mut pr = pr_bound_closed_form(h, w).floor().max(0.0) as u64;
    // The float root can land one off near exact boundaries; settle with integer checks.
    while pr > 0 && !compresses(pr) {
        pr -= 1;
    }
    while compresses(pr + 1) {
        pr += 1;
    }
    pr.min(h.min(w))
}

/// MAC counts for one `h × w` linear layer applied to `batch_rows` activation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactoredCost {
    /// `batch_rows·H·W`.
    pub dense: u64,
    /// `batch_rows·(H·PR + PR² + PR·W)`: `((x·A)·B)·C` without rebuilding `W`.
    pub chain: u64,
    /// Rebuild `W = A·B·C` once (`H·PR² + H·PR·W`), then the dense multiply.
    pub reconstruct_then_multiply: u64,
}

impl FactoredCost {
    pub fn reconstruction_overhead(&self) -> u64 {
        self.reconstruct_then_multiply - self.dense
    }
}

pub fn factored_forward_flops(
    h: u64,
    w: u64,
    pr: u64,
    batch_rows: u64,
) -> Result<FactoredCost, CompressError> {
    check_dims(h, w, pr)?;
    if batch_rows == 0 {
        return Err(CompressError::ZeroBatch);
    }
    let dense = batch_rows * h * w;
    Ok(FactoredCost {
        dense,
        chain: batch_rows * factored_params(h, w, pr),
        reconstruct_then_multiply: h * pr * pr + h * pr * w + dense,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub peak_macs_per_s: f64,
    pub peak_bw_bytes_per_s: f64,
    pub board_power_w: f64,
}

impl HardwareSpec {
    /// A100-class accelerator: 312 TMAC/s FP16 tensor throughput, 2.0 TB/s HBM, 300 W board power.
    pub fn a100_like() -> Self {
        Self {
            peak_macs_per_s: 312e12,
            peak_bw_bytes_per_s: 2.0e12,
            board_power_w: 300.0,
        }
    }

    /// Operational intensity (MAC per byte) at the roofline knee.
    pub fn knee(&self) -> f64 {
        self.peak_macs_per_s / self.peak_bw_bytes_per_s
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        for (name, v) in [
            ("peak_macs_per_s", self.peak_macs_per_s),
            ("peak_bw_bytes_per_s", self.peak_bw_bytes_per_s),
            ("board_power_w", self.board_power_w),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CompressError::InvalidHardware(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CompressError> {
        let hw: HardwareSpec =
            toml::from_str(s).map_err(|e| CompressError::InvalidHardware(e.to_string()))?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: &Path) -> Result<Self, CompressError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CompressError::InvalidHardware(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("hardware spec serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    MemoryBound,
    ComputeBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineEstimate {
    pub compute_time_s: f64,
    pub traffic_time_s: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub bound: Bound,
}

/// Latency is the slower of the compute and traffic limits; energy is latency at board power.
pub fn roofline_estimate(macs: f64, traffic_bytes: f64, hw: &HardwareSpec) -> RooflineEstimate {
    let compute_time_s = macs / hw.peak_macs_per_s;
    let traffic_time_s = traffic_bytes / hw.peak_bw_bytes_per_s;
    let latency_s = compute_time_s.max(traffic_time_s);
    let oi = macs / traffic_bytes;
    RooflineEstimate {
        compute_time_s,
        traffic_time_s,
        latency_s,
        energy_j: latency_s * hw.board_power_w,
        bound: if oi < hw.knee() {
            Bound::MemoryBound
        } else {
            Bound::ComputeBound
        },
    }
}

/// How a decomposed linear layer is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingStyle {
    /// Chained small multiplies, never rebuilding the weight.
    Factored,
    /// Rebuild each weight, then run the dense layer.
    Reconstructing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostQuery {
    pub batch: u64,
    pub seq_len: u64,
    pub precision: Precision,
    pub style: ProcessingStyle,
}

impl CostQuery {
    /// Batch 1, sequence length 128, FP16, factored execution.
    pub fn standard() -> Self {
        Self {
            batch: 1,
            seq_len: 128,
            precision: Precision::F16,
            style: ProcessingStyle::Factored,
        }
    }

    pub fn with_style(self, style: ProcessingStyle) -> Self {
        Self { style, ..self }
    }

    pub fn batch_rows(&self) -> u64 {
        self.batch * self.seq_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub params: u64,
    pub macs: u64,
    pub model_bytes: u64,
    pub traffic_bytes: u64,
    /// MACs per DRAM byte.
    pub oi: f64,
    pub compute_to_model: f64,
    pub roofline_latency_s: f64,
    pub roofline_energy_j: f64,
    pub bound: Bound,
}

/// MACs for the undecomposed model.
pub fn dense_macs(spec: &ModelSpec, batch: u64, seq_len: u64) -> u64 {
    let rows = batch * seq_len;
    let h = spec.hidden as u64;
    let l = spec.n_layers as u64;
    let linear = rows * spec.decomposable_params_per_layer() * l;
    let attention = l * 2 * batch * seq_len * seq_len * h;
    let head = if spec.family.has_lm_head() {
        rows * h * spec.vocab as u64
    } else {
        0
    };
    linear + attention + head
}

/// Parameter count after applying `cfg`.
pub fn decomposed_param_count(spec: &ModelSpec, cfg: &DecompConfig) -> u64 {
    let saved: u64 = cfg
        .pruned_ranks()
        .iter()
        .map(|pr| {
            let role = &spec.roles[pr.tensor];
            let (h, w) = (role.rows as u64, role.cols as u64);
            h * w - factored_params(h, w, pr.rank as u64)
        })
        .sum();
    spec.total_params() - saved
}

fn check_config(spec: &ModelSpec, cfg: &DecompConfig) -> Result<(), CompressError> {
    let verdict = validate(cfg, spec);
    if verdict.is_valid() {
        Ok(())
    } else {
        Err(CompressError::InvalidConfig(verdict.violations))
    }
}

/// Whole-model parameter reduction `1 − after/before` for `cfg`.
pub fn model_compression(
    spec: &ModelSpec,
    cfg: &DecompConfig,
) -> Result<CompressionStats, CompressError> {
    check_config(spec, cfg)?;
    Ok(CompressionStats::from_counts(
        spec.total_params(),
        decomposed_param_count(spec, cfg),
    ))
}

pub fn model_cost_profile(
    spec: &ModelSpec,
    cfg: Option<&DecompConfig>,
    query: &CostQuery,
    hw: &HardwareSpec,
) -> Result<CostProfile, CompressError> {
    hw.validate()?;
    if query.batch == 0 || query.seq_len == 0 {
        return Err(CompressError::ZeroBatch);
    }
    let mut macs = dense_macs(spec, query.batch, query.seq_len);
    let mut params = spec.total_params();
    if let Some(cfg) = cfg {
        check_config(spec, cfg)?;
        for pr in cfg.pruned_ranks() {
            let role = &spec.roles[pr.tensor];
            let cost = factored_forward_flops(
                role.rows as u64,
                role.cols as u64,
                pr.rank as u64,
                query.batch_rows(),
            )?;
            match query.style {
                ProcessingStyle::Factored => macs = macs - cost.dense + cost.chain,
                ProcessingStyle::Reconstructing => macs += cost.reconstruction_overhead(),
            }
        }
        params = decomposed_param_count(spec, cfg);
    }
    let model_bytes = params * query.precision.bytes();
    let traffic_bytes = model_bytes;
    let roof = roofline_estimate(macs as f64, traffic_bytes as f64, hw);
    Ok(CostProfile {
        params,
        macs,
        model_bytes,
        traffic_bytes,
        oi: macs as f64 / traffic_bytes as f64,
        compute_to_model: macs as f64 / model_bytes as f64,
        roofline_latency_s: roof.latency_s,
        roofline_energy_j: roof.energy_j,
        bound: roof.bound,
    })
}

/// One model evaluated dense and, optionally, under a decomposition in both execution styles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub model: String,
    pub batch: u64,
    pub seq_len: u64,
    pub precision: Precision,
    pub dense: CostProfile,
    pub decomposed: Option<DecomposedAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedAnalysis {
    pub compression: CompressionStats,
    pub factored: CostProfile,
    pub reconstructing: CostProfile,
    /// Relative MAC increase of the reconstructing style over the dense model.
    pub ops_increase_reconstructing: f64,
    pub oi_uplift_reconstructing: f64,
    pub oi_uplift_factored: f64,
}

pub fn analyze(
    spec: &ModelSpec,
    cfg: Option<&DecompConfig>,
    query: &CostQuery,
    hw: &HardwareSpec,
) -> Result<AnalysisReport, CompressError> {
    let dense = model_cost_profile(spec, None, query, hw)?;
    let decomposed = match cfg {
        Some(cfg) => {
            let factored = model_cost_profile(
                spec,
                Some(cfg),
                &query.with_style(ProcessingStyle::Factored),
                hw,
            )?;
            let reconstructing = model_cost_profile(
                spec,
                Some(cfg),
                &query.with_style(ProcessingStyle::Reconstructing),
                hw,
            )?;
            Some(DecomposedAnalysis {
                compression: CompressionStats::from_counts(dense.params, factored.params),
                ops_increase_reconstructing: reconstructing.macs as f64 / dense.macs as f64 - 1.0,
                oi_uplift_reconstructing: reconstructing.oi / dense.oi,
                oi_uplift_factored: factored.oi / dense.oi,
                factored,
                reconstructing,
            })
        }
        None => None,
    };
    Ok(AnalysisReport {
        model: spec.name.clone(),
        batch: query.batch,
        seq_len: query.seq_len,
        precision: query.precision,
        dense,
        decomposed,
    })
}
