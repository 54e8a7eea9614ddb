//! Decomposition configurations, their validity rules, the size of the space
//! they form, enumeration, the characterization-driven heuristic, and
//! EDP-minimizing search under an accuracy-drop threshold.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{decomposed_param_count, model_cost_profile, CostQuery, HardwareSpec};
use crate::model::{
    apply_decomposition, logit_divergence, Checkpoint, DivergenceOptions, ModelSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignSpaceError {
    #[error("invalid decomposition config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error("pruned rank {rank} exceeds the smallest admissible tensor rank {max}")]
    RankTooLarge { rank: usize, max: usize },
    #[error("pruned rank must be positive")]
    ZeroRank,
    #[error("enumeration supports at most 127 layers and tensors, got {0}")]
    TooManyAxes(usize),
    #[error(
        "target reduction {target} is unreachable (maximum {max:.4} with rank-1 on every layer)"
    )]
    UnreachableTarget { target: f64, max: f64 },
    #[error("no candidates to search")]
    NoCandidates,
    #[error("provider failed on config {config}: {message}")]
    Provider { config: String, message: String },
    #[error("config document: {0}")]
    Document(String),
}

/// One `(layer, tensor, pruned rank)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrunedRank {
    pub layer: usize,
    pub tensor: usize,
    pub rank: usize,
}

/// A decomposition configuration: which layers, which tensor roles, and the
/// pruned rank of every decomposed (layer, role) pair. Layer ids are 0-indexed.
///
/// The derived ordering (layers, then tensors, then ranks) is the tie-break
/// used wherever configs must be ordered deterministically.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecompConfig {
    layers: BTreeSet<usize>,
    tensors: BTreeSet<usize>,
    pruned_ranks: BTreeSet<PrunedRank>,
}

impl DecompConfig {
    /// The undecomposed model.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Homogeneous config: every listed tensor in every listed layer at rank `pr`.
    pub fn uniform(
        layers: impl IntoIterator<Item = usize>,
        tensors: impl IntoIterator<Item = usize>,
        pr: usize,
    ) -> Self {
        let layers: BTreeSet<usize> = layers.into_iter().collect();
        let tensors: BTreeSet<usize> = tensors.into_iter().collect();
        let pruned_ranks = layers
            .iter()
            .flat_map(|&l| {
                tensors.iter().map(move |&k| PrunedRank {
                    layer: l,
                    tensor: k,
                    rank: pr,
                })
            })
            .collect();
        Self {
            layers,
            tensors,
            pruned_ranks,
        }
    }

    /// Builds a config from raw parts without checking it; see [`validate`].
    pub fn from_parts(
        layers: impl IntoIterator<Item = usize>,
        tensors: impl IntoIterator<Item = usize>,
        pruned_ranks: impl IntoIterator<Item = PrunedRank>,
    ) -> Self {
        Self {
            layers: layers.into_iter().collect(),
            tensors: tensors.into_iter().collect(),
            pruned_ranks: pruned_ranks.into_iter().collect(),
        }
    }

    pub fn layers(&self) -> &BTreeSet<usize> {
        &self.layers
    }

    pub fn tensors(&self) -> &BTreeSet<usize> {
        &self.tensors
    }

    pub fn pruned_ranks(&self) -> &BTreeSet<PrunedRank> {
        &self.pruned_ranks
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty() && self.tensors.is_empty() && self.pruned_ranks.is_empty()
    }

    /// The shared pruned rank, if every triple uses the same one.
    pub fn uniform_rank(&self) -> Option<usize> {
        let mut ranks = self.pruned_ranks.iter().map(|p| p.rank);
        let first = ranks.next()?;
        ranks.all(|r| r == first).then_some(first)
    }

    pub fn rank_of(&self, layer: usize, tensor: usize) -> Option<usize> {
        self.pruned_ranks
            .iter()
            .find(|p| p.layer == layer && p.tensor == tensor)
            .map(|p| p.rank)
    }
}

impl fmt::Display for DecompConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("<undecomposed>");
        }
        let join = |s: &BTreeSet<usize>| {
            s.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(
            f,
            "layers=[{}] tensors=[{}]",
            join(&self.layers),
            join(&self.tensors)
        )?;
        match self.uniform_rank() {
            Some(r) => write!(f, " pr={r}"),
            None => write!(f, " pr=mixed"),
        }
    }
}

/// A broken validity rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LayerOutOfRange {
        layer: usize,
        n_layers: usize,
    },
    TensorOutOfRange {
        tensor: usize,
        n_tensors: usize,
    },
    NonPositiveRank {
        layer: usize,
        tensor: usize,
    },
    RankExceedsOriginal {
        layer: usize,
        tensor: usize,
        rank: usize,
        max: usize,
    },
    TripleOutsideSelection {
        layer: usize,
        tensor: usize,
    },
    MissingPair {
        layer: usize,
        tensor: usize,
    },
    DuplicatePair {
        layer: usize,
        tensor: usize,
    },
    /// Exactly one of the layer and tensor sets is empty.
    HalfEmptySelection,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LayerOutOfRange { layer, n_layers } => write!(
                f,
                "layer-range: layer {layer} (0-indexed) is outside 0..{n_layers}"
            ),
            Violation::TensorOutOfRange { tensor, n_tensors } => write!(
                f,
                "tensor-range: tensor {tensor} is outside 0..{n_tensors}"
            ),
            Violation::NonPositiveRank { layer, tensor } => write!(
                f,
                "positive-rank: pruned rank for layer {layer}, tensor {tensor} must be positive"
            ),
            Violation::RankExceedsOriginal { layer, tensor, rank, max } => write!(
                f,
                "rank-bound: pruned rank {rank} for layer {layer}, tensor {tensor} exceeds the original rank {max}"
            ),
            Violation::TripleOutsideSelection { layer, tensor } => write!(
                f,
                "coverage: triple for layer {layer}, tensor {tensor} is outside the decomposed layers/tensors"
            ),
            Violation::MissingPair { layer, tensor } => write!(
                f,
                "coverage: no pruned rank for decomposed pair (layer {layer}, tensor {tensor})"
            ),
            Violation::DuplicatePair { layer, tensor } => write!(
                f,
                "coverage: more than one pruned rank for pair (layer {layer}, tensor {tensor})"
            ),
            Violation::HalfEmptySelection => f.write_str(
                "selection: decomposed layers and tensors must be both empty or both non-empty",
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validity {
    pub violations: Vec<Violation>,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), DesignSpaceError> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(DesignSpaceError::InvalidConfig(self.violations))
        }
    }
}

/// Checks every config invariant against the shapes in `spec`.
pub fn validate(cfg: &DecompConfig, spec: &ModelSpec) -> Validity {
    let mut v = Vec::new();
    for &layer in &cfg.layers {
        if layer >= spec.n_layers {
            v.push(Violation::LayerOutOfRange {
                layer,
                n_layers: spec.n_layers,
            });
        }
    }
    for &tensor in &cfg.tensors {
        if tensor >= spec.n_tensors() {
            v.push(Violation::TensorOutOfRange {
                tensor,
                n_tensors: spec.n_tensors(),
            });
        }
    }
    if cfg.layers.is_empty() != cfg.tensors.is_empty() {
        v.push(Violation::HalfEmptySelection);
    }

    let mut seen = BTreeSet::new();
    for p in &cfg.pruned_ranks {
        if !cfg.layers.contains(&p.layer) || !cfg.tensors.contains(&p.tensor) {
            v.push(Violation::TripleOutsideSelection {
                layer: p.layer,
                tensor: p.tensor,
            });
        }
        if !seen.insert((p.layer, p.tensor)) {
            v.push(Violation::DuplicatePair {
                layer: p.layer,
                tensor: p.tensor,
            });
        }
        if p.rank == 0 {
            v.push(Violation::NonPositiveRank {
                layer: p.layer,
                tensor: p.tensor,
            });
        } else if let Some(role) = spec.role(p.tensor) {
            if p.rank > role.rank() {
                v.push(Violation::RankExceedsOriginal {
                    layer: p.layer,
                    tensor: p.tensor,
                    rank: p.rank,
                    max: role.rank(),
                });
            }
        }
    }
    for &layer in &cfg.layers {
        for &tensor in &cfg.tensors {
            if !seen.contains(&(layer, tensor)) {
                v.push(Violation::MissingPair { layer, tensor });
            }
        }
    }
    Validity { violations: v }
}

/// Size of the homogeneous decomposition space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceDescriptor {
    pub n_layers: usize,
    pub n_tensors: usize,
    /// Number of admissible uniform pruned ranks.
    pub rank: usize,
    /// `(2^L − 1)(2^K − 1)·rank + 1`.
    pub size: BigUint,
}

impl SpaceDescriptor {
    pub fn log2_size(&self) -> f64 {
        big_log2(&self.size)
    }

    /// Count of configs ignoring the rank axis, `(2^L − 1)(2^K − 1) + 1`.
    pub fn layer_tensor_combinations(&self) -> BigUint {
        space_size(self.n_layers, self.n_tensors, 1).size
    }

    /// Exponent `L + K` of the big-O growth `O(2^(L+K))`.
    pub fn order_exponent(&self) -> usize {
        self.n_layers + self.n_tensors
    }
}

fn big_log2(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 52 {
        let v: u64 = x.iter_u64_digits().next().unwrap_or(0);
        return (v as f64).log2();
    }
    let shift = bits - 53;
    let top = (x >> shift).iter_u64_digits().next().unwrap_or(0);
    (top as f64).log2() + shift as f64
}

pub fn space_size(n_layers: usize, n_tensors: usize, rank: usize) -> SpaceDescriptor {
    let one = BigUint::from(1u32);
    let layer_sets = (&one << n_layers) - &one;
    let tensor_sets = (&one << n_tensors) - &one;
    let size = layer_sets * tensor_sets * BigUint::from(rank) + one;
    SpaceDescriptor {
        n_layers,
        n_tensors,
        rank,
        size,
    }
}

/// Descriptor for a model, using the smallest maximal tensor rank as the rank count.
pub fn space_for(spec: &ModelSpec) -> SpaceDescriptor {
    space_size(spec.n_layers, spec.n_tensors(), spec.min_role_rank())
}

/// Subset constraints applied to the layer and tensor selections during enumeration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnumFilter {
    /// Layers every config must contain.
    pub layers_include: BTreeSet<usize>,
    /// If set, configs may only use these layers.
    pub layers_within: Option<BTreeSet<usize>>,
    pub tensors_include: BTreeSet<usize>,
    pub tensors_within: Option<BTreeSet<usize>>,
    pub min_layers: Option<usize>,
    pub max_layers: Option<usize>,
}

/// Free and forced bit positions for one axis after applying the filter.
#[derive(Debug, Clone)]
struct AxisPlan {
    forced: u128,
    free: Vec<usize>,
    min_count: usize,
    max_count: usize,
}

impl AxisPlan {
    fn new(
        n: usize,
        include: &BTreeSet<usize>,
        within: Option<&BTreeSet<usize>>,
        min: Option<usize>,
        max: Option<usize>,
    ) -> Option<Self> {
        let allowed: BTreeSet<usize> = match within {
            Some(w) => w.iter().copied().filter(|&i| i < n).collect(),
            None => (0..n).collect(),
        };
        if include.iter().any(|i| !allowed.contains(i)) {
            return None;
        }
        let forced = include.iter().fold(0u128, |m, &i| m | (1u128 << i));
        let free = allowed.difference(include).copied().collect();
        Some(Self {
            forced,
            free,
            min_count: min.unwrap_or(1).max(1),
            max_count: max.unwrap_or(usize::MAX),
        })
    }

    /// Number of non-empty masks satisfying the plan.
    fn count(&self) -> BigUint {
        let base = self.forced.count_ones() as usize;
        let mut total = BigUint::from(0u32);
        let mut binom = BigUint::from(1u32);
        for extra in 0..=self.free.len() {
            if extra > 0 {
                binom = binom * BigUint::from(self.free.len() - extra + 1) / BigUint::from(extra);
            }
            let c = base + extra;
            if c >= self.min_count && c <= self.max_count {
                total += &binom;
            }
        }
        total
    }

    /// The mask for compact index `idx` (bits of `idx` deposited onto the free positions).
    fn mask(&self, idx: u128) -> u128 {
        let mut m = self.forced;
        for (bit, &pos) in self.free.iter().enumerate() {
            if idx >> bit & 1 == 1 {
                m |= 1u128 << pos;
            }
        }
        m
    }

    fn accepts(&self, mask: u128) -> bool {
        let c = mask.count_ones() as usize;
        mask != 0 && c >= self.min_count && c <= self.max_count
    }

    fn index_limit(&self) -> u128 {
        1u128 << self.free.len()
    }
}

fn bits_to_set(mask: u128) -> Vec<usize> {
    (0..128).filter(|i| mask >> i & 1 == 1).collect()
}

/// Streams every homogeneous config: the empty config first, then layer masks
/// ascending, tensor masks ascending within each, ranks ascending within each.
pub struct ConfigEnumerator {
    layers: Option<AxisPlan>,
    tensors: Option<AxisPlan>,
    ranks: Vec<usize>,
    emitted_empty: bool,
    layer_idx: u128,
    tensor_idx: u128,
    rank_idx: usize,
}

impl ConfigEnumerator {
    fn advance_layer(&mut self) {
        self.layer_idx += 1;
        self.tensor_idx = 0;
        self.rank_idx = 0;
    }
}

impl Iterator for ConfigEnumerator {
    type Item = DecompConfig;

    fn next(&mut self) -> Option<DecompConfig> {
        if !self.emitted_empty {
            self.emitted_empty = true;
            return Some(DecompConfig::empty());
        }
        let (lp, tp) = match (&self.layers, &self.tensors) {
            (Some(l), Some(t)) if !self.ranks.is_empty() => (l.clone(), t.clone()),
            _ => return None,
        };
        loop {
            if self.layer_idx >= lp.index_limit() {
                return None;
            }
            let lmask = lp.mask(self.layer_idx);
            if !lp.accepts(lmask) {
                self.advance_layer();
                continue;
            }
            if self.tensor_idx >= tp.index_limit() {
                self.advance_layer();
                continue;
            }
            let tmask = tp.mask(self.tensor_idx);
            if !tp.accepts(tmask) {
                self.tensor_idx += 1;
                self.rank_idx = 0;
                continue;
            }
            let rank = self.ranks[self.rank_idx];
            self.rank_idx += 1;
            if self.rank_idx == self.ranks.len() {
                self.rank_idx = 0;
                self.tensor_idx += 1;
            }
            return Some(DecompConfig::uniform(
                bits_to_set(lmask),
                bits_to_set(tmask),
                rank,
            ));
        }
    }
}

fn plans(
    spec: &ModelSpec,
    filter: &EnumFilter,
) -> Result<(Option<AxisPlan>, Option<AxisPlan>), DesignSpaceError> {
    let axes = spec.n_layers.max(spec.n_tensors());
    if axes > 127 {
        return Err(DesignSpaceError::TooManyAxes(axes));
    }
    let layers = AxisPlan::new(
        spec.n_layers,
        &filter.layers_include,
        filter.layers_within.as_ref(),
        filter.min_layers,
        filter.max_layers,
    );
    let tensors = AxisPlan::new(
        spec.n_tensors(),
        &filter.tensors_include,
        filter.tensors_within.as_ref(),
        None,
        None,
    );
    Ok((layers, tensors))
}

fn check_ranks(
    spec: &ModelSpec,
    filter: &EnumFilter,
    ranks: &[usize],
) -> Result<Vec<usize>, DesignSpaceError> {
    let admissible = (0..spec.n_tensors())
        .filter(|k| filter.tensors_within.as_ref().is_none_or(|w| w.contains(k)))
        .filter_map(|k| spec.role(k).map(|r| r.rank()))
        .min()
        .unwrap_or(0);
    let ranks: Vec<usize> = ranks
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for &r in &ranks {
        if r == 0 {
            return Err(DesignSpaceError::ZeroRank);
        }
        if r > admissible {
            return Err(DesignSpaceError::RankTooLarge {
                rank: r,
                max: admissible,
            });
        }
    }
    Ok(ranks)
}

/// Enumerates homogeneous configs for the given uniform ranks.
pub fn enumerate(
    spec: &ModelSpec,
    ranks: &[usize],
    filter: &EnumFilter,
) -> Result<ConfigEnumerator, DesignSpaceError> {
    let ranks = check_ranks(spec, filter, ranks)?;
    let (layers, tensors) = plans(spec, filter)?;
    Ok(ConfigEnumerator {
        layers,
        tensors,
        ranks,
        emitted_empty: false,
        layer_idx: 0,
        tensor_idx: 0,
        rank_idx: 0,
    })
}

/// Number of configs [`enumerate`] would yield, without materializing them.
pub fn count_configs(
    spec: &ModelSpec,
    ranks: &[usize],
    filter: &EnumFilter,
) -> Result<BigUint, DesignSpaceError> {
    let ranks = check_ranks(spec, filter, ranks)?;
    let (layers, tensors) = plans(spec, filter)?;
    let body = match (layers, tensors) {
        (Some(l), Some(t)) => l.count() * t.count() * BigUint::from(ranks.len()),
        _ => BigUint::from(0u32),
    };
    Ok(body + BigUint::from(1u32))
}

/// Result of [`heuristic_prune`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicChoice {
    pub config: DecompConfig,
    pub reduction: f64,
}

/// Parameter reduction from rank-1 decomposition of every role in `count` layers.
fn rank1_reduction(spec: &ModelSpec, count: usize) -> f64 {
    let cfg = DecompConfig::uniform(0..count, 0..spec.n_tensors(), 1);
    1.0 - decomposed_param_count(spec, &cfg) as f64 / spec.total_params() as f64
}

/// Candidate layer windows, most preferred first: skip layers 0-1 and the last
/// three, then re-admit the late layers one at a time, then the early ones.
fn layer_windows(n: usize) -> Vec<(usize, usize)> {
    let last = n - 1;
    let mut out = Vec::new();
    for hi_back in (0..=3usize).rev() {
        if last >= hi_back && last - hi_back >= 2 {
            out.push((2, last - hi_back));
        }
    }
    for lo in [1usize, 0] {
        if lo <= last {
            out.push((lo, last));
        }
    }
    out
}

/// `count` layers spread over `[lo, hi]` as far apart as possible; among
/// equally spread sets, the lexicographically smallest.
fn spread_layers(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1);
    (0..count).map(|i| lo + i * step).collect()
}

/// Rank-1, all-roles config with the fewest layers reaching `target_reduction`,
/// placed away from the first two and last three layers and spaced out.
pub fn heuristic_prune(
    spec: &ModelSpec,
    target_reduction: f64,
) -> Result<HeuristicChoice, DesignSpaceError> {
    let max = rank1_reduction(spec, spec.n_layers);
    if !(target_reduction > 0.0 && target_reduction <= max) {
        return Err(DesignSpaceError::UnreachableTarget {
            target: target_reduction,
            max,
        });
    }
    let count = (1..=spec.n_layers)
        .find(|&c| rank1_reduction(spec, c) >= target_reduction)
        .expect("target is reachable");
    let (lo, hi) = layer_windows(spec.n_layers)
        .into_iter()
        .find(|(lo, hi)| hi - lo + 1 >= count)
        .expect("the full window always fits");
    let config = DecompConfig::uniform(spread_layers(lo, hi, count), 0..spec.n_tensors(), 1);
    Ok(HeuristicChoice {
        reduction: rank1_reduction(spec, count),
        config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub latency_s: f64,
    pub energy_j: f64,
}

pub trait CostProvider: Sync {
    fn cost(&self, cfg: &DecompConfig) -> Result<CostEstimate, String>;
}

pub trait AccuracyProvider: Sync {
    /// Accuracy of the undecomposed model.
    fn baseline(&self) -> Result<f64, String>;
    fn accuracy(&self, cfg: &DecompConfig) -> Result<f64, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveOutcome {
    pub config: DecompConfig,
    pub latency_s: f64,
    pub energy_j: f64,
    pub edp: f64,
    pub accuracy_proxy: f64,
    pub accuracy_drop: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Minimum-EDP feasible outcome, or the overall best if nothing is feasible.
    pub best: ObjectiveOutcome,
    pub any_feasible: bool,
    /// Feasible first, then ascending EDP, then config order.
    pub ranked: Vec<ObjectiveOutcome>,
}

fn rank_cmp(a: &ObjectiveOutcome, b: &ObjectiveOutcome) -> std::cmp::Ordering {
    b.feasible
        .cmp(&a.feasible)
        .then(a.edp.total_cmp(&b.edp))
        .then_with(|| a.config.cmp(&b.config))
}

/// Minimizes latency × energy over candidates whose accuracy drop stays below `tau`.
/// Candidates are evaluated in parallel; the result does not depend on scheduling.
pub fn search(
    spec: &ModelSpec,
    candidates: Vec<DecompConfig>,
    cost: &dyn CostProvider,
    accuracy: &dyn AccuracyProvider,
    tau: f64,
) -> Result<SearchResult, DesignSpaceError> {
    if candidates.is_empty() {
        return Err(DesignSpaceError::NoCandidates);
    }
    for c in &candidates {
        validate(c, spec).into_result()?;
    }
    let baseline = accuracy
        .baseline()
        .map_err(|message| DesignSpaceError::Provider {
            config: DecompConfig::empty().to_string(),
            message,
        })?;
    let results: Vec<Result<ObjectiveOutcome, DesignSpaceError>> = candidates
        .into_par_iter()
        .map(|config| {
            let fail = |message: String| DesignSpaceError::Provider {
                config: config.to_string(),
                message,
            };
            let c = cost.cost(&config).map_err(fail)?;
            let acc = accuracy.accuracy(&config).map_err(fail)?;
            let drop = (baseline - acc).max(0.0);
            Ok(ObjectiveOutcome {
                latency_s: c.latency_s,
                energy_j: c.energy_j,
                edp: c.latency_s * c.energy_j,
                accuracy_proxy: acc,
                accuracy_drop: drop,
                feasible: drop < tau,
                config,
            })
        })
        .collect();
    let mut ranked = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(rank_cmp);
    let best = ranked[0].clone();
    Ok(SearchResult {
        any_feasible: best.feasible,
        best,
        ranked,
    })
}

/// Roofline latency and energy from the analytic cost model.
pub struct RooflineCostProvider {
    pub spec: ModelSpec,
    pub query: CostQuery,
    pub hardware: HardwareSpec,
}

impl CostProvider for RooflineCostProvider {
    fn cost(&self, cfg: &DecompConfig) -> Result<CostEstimate, String> {
        let p = model_cost_profile(&self.spec, Some(cfg), &self.query, &self.hardware)
            .map_err(|e| e.to_string())?;
        Ok(CostEstimate {
            latency_s: p.roofline_latency_s,
            energy_j: p.roofline_energy_j,
        })
    }
}

/// Accuracy proxy `1 − min(KL / ln(vocab), 1)` from the logit divergence between
/// the original checkpoint and its decomposition.
pub struct DivergenceAccuracyProvider {
    pub original: Checkpoint,
    pub options: DivergenceOptions,
}

impl AccuracyProvider for DivergenceAccuracyProvider {
    fn baseline(&self) -> Result<f64, String> {
        Ok(1.0)
    }

    fn accuracy(&self, cfg: &DecompConfig) -> Result<f64, String> {
        let decomposed = apply_decomposition(&self.original, cfg).map_err(|e| e.to_string())?;
        let report = logit_divergence(&self.original, &decomposed, &self.options)
            .map_err(|e| e.to_string())?;
        let scale = (self.original.spec().vocab as f64).ln();
        Ok(1.0 - (report.mean_kl / scale).min(1.0))
    }
}

/// Human-readable homogeneous config with 1-indexed layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDocument {
    pub pruned_rank: usize,
    pub layers: Vec<usize>,
    /// Role names, or `["all"]`.
    pub tensors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFile {
    #[serde(default)]
    pub candidate: Vec<ConfigDocument>,
}

impl ConfigDocument {
    pub fn from_config(cfg: &DecompConfig, spec: &ModelSpec) -> Result<Self, DesignSpaceError> {
        if cfg.is_empty() {
            return Ok(Self {
                pruned_rank: 0,
                layers: Vec::new(),
                tensors: Vec::new(),
            });
        }
        let pruned_rank = cfg.uniform_rank().ok_or_else(|| {
            DesignSpaceError::Document("only uniform pruned ranks can be written".into())
        })?;
        let tensors = cfg
            .tensors()
            .iter()
            .map(|&k| {
                spec.role(k)
                    .map(|r| r.name.clone())
                    .ok_or_else(|| DesignSpaceError::Document(format!("unknown tensor id {k}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            pruned_rank,
            layers: cfg.layers().iter().map(|l| l + 1).collect(),
            tensors,
        })
    }

    /// Converts to a 0-indexed config. The result still needs [`validate`].
    pub fn to_config(&self, spec: &ModelSpec) -> Result<DecompConfig, DesignSpaceError> {
        if self.layers.is_empty() && self.tensors.is_empty() {
            return Ok(DecompConfig::empty());
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for &l in &self.layers {
            if l == 0 {
                return Err(DesignSpaceError::Document(
                    "layer ids are 1-indexed; 0 is not a layer".into(),
                ));
            }
            layers.push(l - 1);
        }
        let tensors = parse_tensor_names(&self.tensors, spec)?;
        Ok(DecompConfig::uniform(layers, tensors, self.pruned_rank))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("document serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DesignSpaceError> {
        toml::from_str(s).map_err(|e| DesignSpaceError::Document(e.to_string()))
    }
}

/// Resolves role names (or `all`) to tensor ids.
pub fn parse_tensor_names(
    names: &[String],
    spec: &ModelSpec,
) -> Result<Vec<usize>, DesignSpaceError> {
    if names.len() == 1 && names[0].eq_ignore_ascii_case("all") {
        return Ok((0..spec.n_tensors()).collect());
    }
    names
        .iter()
        .map(|n| {
            spec.role_id(n).ok_or_else(|| {
                DesignSpaceError::Document(format!("unknown tensor role '{n}' for {}", spec.name))
            })
        })
        .collect()
}

impl CandidateFile {
    pub fn from_toml_str(s: &str) -> Result<Self, DesignSpaceError> {
        toml::from_str(s).map_err(|e| DesignSpaceError::Document(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("candidates serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, ModelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n_layers: usize, n_tensors: usize, dim: usize) -> ModelSpec {
        let mut s = ModelSpec::llama_style("synthetic", Family::Toy, n_layers, 8, 1, 8, 8, 8);
        s.roles.truncate(n_tensors);
        for r in &mut s.roles {
            r.rows = dim;
            r.cols = dim + 1;
        }
        s
    }

    #[test]
    fn empty_config_is_valid() {
        assert!(validate(&DecompConfig::empty(), &ModelSpec::toy_llama()).is_valid());
    }

    #[test]
    fn zero_rank_is_invalid() {
        let cfg = DecompConfig::uniform([0], [0], 0);
        let v = validate(&cfg, &ModelSpec::toy_llama());
        assert_eq!(
            v.violations,
            vec![Violation::NonPositiveRank {
                layer: 0,
                tensor: 0
            }]
        );
        assert!(v.violations[0].to_string().contains("positive"));
    }

    #[test]
    fn triple_outside_layer_selection_is_invalid() {
        let cfg = DecompConfig::from_parts(
            [0],
            [1],
            [
                PrunedRank {
                    layer: 0,
                    tensor: 1,
                    rank: 1,
                },
                PrunedRank {
                    layer: 2,
                    tensor: 1,
                    rank: 1,
                },
            ],
        );
        let v = validate(&cfg, &ModelSpec::toy_llama());
        assert!(v.violations.contains(&Violation::TripleOutsideSelection {
            layer: 2,
            tensor: 1
        }));
    }

    #[test]
    fn coverage_and_range_violations() {
        let spec = ModelSpec::toy_llama();
        let missing = DecompConfig::from_parts(
            [0, 1],
            [0],
            [PrunedRank {
                layer: 0,
                tensor: 0,
                rank: 1,
            }],
        );
        assert_eq!(
            validate(&missing, &spec).violations,
            vec![Violation::MissingPair {
                layer: 1,
                tensor: 0
            }]
        );
        let dup = DecompConfig::from_parts(
            [0],
            [0],
            [
                PrunedRank {
                    layer: 0,
                    tensor: 0,
                    rank: 1,
                },
                PrunedRank {
                    layer: 0,
                    tensor: 0,
                    rank: 2,
                },
            ],
        );
        assert_eq!(
            validate(&dup, &spec).violations,
            vec![Violation::DuplicatePair {
                layer: 0,
                tensor: 0
            }]
        );
        let big = DecompConfig::uniform([0], [4], 65);
        assert_eq!(
            validate(&big, &spec).violations,
            vec![Violation::RankExceedsOriginal {
                layer: 0,
                tensor: 4,
                rank: 65,
                max: 64
            }]
        );
        let out = DecompConfig::uniform([4], [7], 1);
        let v = validate(&out, &spec).violations;
        assert!(v.contains(&Violation::LayerOutOfRange {
            layer: 4,
            n_layers: 4
        }));
        assert!(v.contains(&Violation::TensorOutOfRange {
            tensor: 7,
            n_tensors: 7
        }));
        let half = DecompConfig::from_parts([0], [], []);
        assert_eq!(
            validate(&half, &spec).violations,
            vec![Violation::HalfEmptySelection]
        );
    }

    #[test]
    fn space_size_examples() {
        let d = space_size(2, 2, 3);
        assert_eq!(d.size, BigUint::from(28u32));
        let spec = synthetic(2, 2, 3);
        assert_eq!(
            enumerate(&spec, &[1, 2, 3], &EnumFilter::default())
                .unwrap()
                .count(),
            28
        );

        let bert = space_size(12, 6, 768);
        assert_eq!(bert.size, BigUint::from(4095u64 * 63 * 768 + 1));
        assert_eq!(bert.order_exponent(), 18);
        assert_eq!(big_log2(&bert.layer_tensor_combinations()).round(), 18.0);
        assert_eq!(space_size(32, 7, 4096).order_exponent(), 39);
        assert_eq!(space_size(80, 7, 1).log2_size().round(), 87.0);
        assert!((big_log2(&BigUint::from(1u64 << 60)) - 60.0).abs() < 1e-12);
    }

    #[test]
    fn enumerate_two_by_two() {
        let spec = synthetic(2, 2, 4);
        let all: Vec<_> = enumerate(&spec, &[1], &EnumFilter::default())
            .unwrap()
            .collect();
        assert_eq!(all.len(), 10);
        assert!(all[0].is_empty());
        assert_eq!(all[1], DecompConfig::uniform([0], [0], 1));
        assert_eq!(all[2], DecompConfig::uniform([0], [1], 1));
        assert_eq!(all[3], DecompConfig::uniform([0], [0, 1], 1));
        assert_eq!(all[4], DecompConfig::uniform([1], [0], 1));
        assert_eq!(all[9], DecompConfig::uniform([0, 1], [0, 1], 1));
        let again: Vec<_> = enumerate(&spec, &[1], &EnumFilter::default())
            .unwrap()
            .collect();
        assert_eq!(all, again);
    }

    #[test]
    fn enumerate_with_layer_filter() {
        let spec = synthetic(3, 2, 4);
        let filter = EnumFilter {
            layers_include: [0].into(),
            ..EnumFilter::default()
        };
        let configs: Vec<_> = enumerate(&spec, &[1], &filter).unwrap().collect();
        assert_eq!(configs.len(), 4 * 3 + 1);
        let layer_sets: BTreeSet<Vec<usize>> = configs[1..]
            .iter()
            .map(|c| c.layers().iter().copied().collect())
            .collect();
        assert_eq!(
            layer_sets,
            [vec![0], vec![0, 1], vec![0, 2], vec![0, 1, 2]]
                .into_iter()
                .collect()
        );
        assert_eq!(
            count_configs(&spec, &[1], &filter).unwrap(),
            BigUint::from(13u32)
        );

        let impossible = EnumFilter {
            layers_include: [0].into(),
            layers_within: Some([1, 2].into()),
            ..EnumFilter::default()
        };
        let only_empty: Vec<_> = enumerate(&spec, &[1], &impossible).unwrap().collect();
        assert_eq!(only_empty, vec![DecompConfig::empty()]);
    }

    #[test]
    fn enumeration_rank_checks() {
        let spec = synthetic(2, 2, 3);
        assert!(matches!(
            enumerate(&spec, &[4], &EnumFilter::default()),
            Err(DesignSpaceError::RankTooLarge { rank: 4, max: 3 })
        ));
        assert!(matches!(
            enumerate(&spec, &[0], &EnumFilter::default()),
            Err(DesignSpaceError::ZeroRank)
        ));
    }

    #[test]
    fn bert_count_only_matches_formula() {
        let spec = ModelSpec::bert_base();
        let n = count_configs(&spec, &[1], &EnumFilter::default()).unwrap();
        assert_eq!(n, BigUint::from(4095u64 * 63 + 1));
        assert_eq!(n, space_size(12, 6, 1).size);
    }

    #[test]
    fn enumeration_completeness_small() {
        for l in 1..=4 {
            for t in 1..=3 {
                let spec = synthetic(l, t, 3);
                for r in 1..=3 {
                    let ranks: Vec<usize> = (1..=r).collect();
                    let n = enumerate(&spec, &ranks, &EnumFilter::default())
                        .unwrap()
                        .count();
                    assert_eq!(BigUint::from(n), space_size(l, t, r).size);
                    assert_eq!(
                        count_configs(&spec, &ranks, &EnumFilter::default()).unwrap(),
                        space_size(l, t, r).size
                    );
                }
            }
        }
    }

    #[test]
    fn heuristic_matches_layer_table_shapes() {
        let spec = ModelSpec::llama2_7b();
        let h15 = heuristic_prune(&spec, 0.15).unwrap();
        assert_eq!(
            h15.config.layers().iter().copied().collect::<Vec<_>>(),
            vec![2, 8, 14, 20, 26]
        );
        assert_eq!(h15.config.uniform_rank(), Some(1));
        assert_eq!(h15.config.tensors().len(), 7);
        assert!((h15.reduction - 0.15).abs() < 0.01);

        let h6 = heuristic_prune(&spec, 0.06).unwrap();
        assert_eq!(h6.config.layers().len(), 2);
        assert_eq!(
            h6.config.layers().iter().copied().collect::<Vec<_>>(),
            vec![2, 28]
        );

        let h96 = heuristic_prune(&spec, 0.96).unwrap();
        assert_eq!(h96.config.layers().len(), 32);

        let h84 = heuristic_prune(&spec, 0.84).unwrap();
        assert_eq!(h84.config.layers().len(), 28);
        assert!(validate(&h84.config, &spec).is_valid());

        assert!(matches!(
            heuristic_prune(&spec, 0.99),
            Err(DesignSpaceError::UnreachableTarget { .. })
        ));
        assert!(heuristic_prune(&spec, 0.0).is_err());
        assert_eq!(heuristic_prune(&spec, 0.15).unwrap(), h15);
    }

    #[test]
    fn heuristic_on_tiny_models() {
        let spec = ModelSpec::toy_llama();
        let one = heuristic_prune(&spec, 0.01).unwrap();
        assert_eq!(one.config.layers().len(), 1);
        let all = heuristic_prune(&spec, rank1_reduction(&spec, 4)).unwrap();
        assert_eq!(all.config.layers().len(), 4);
    }

    struct TableCost(Vec<(DecompConfig, f64, f64)>);
    impl CostProvider for TableCost {
        fn cost(&self, cfg: &DecompConfig) -> Result<CostEstimate, String> {
            self.0
                .iter()
                .find(|(c, _, _)| c == cfg)
                .map(|(_, l, e)| CostEstimate {
                    latency_s: *l,
                    energy_j: *e,
                })
                .ok_or_else(|| "unknown config".to_string())
        }
    }

    struct TableAccuracy(Vec<(DecompConfig, f64)>, f64);
    impl AccuracyProvider for TableAccuracy {
        fn baseline(&self) -> Result<f64, String> {
            Ok(self.1)
        }
        fn accuracy(&self, cfg: &DecompConfig) -> Result<f64, String> {
            self.0
                .iter()
                .find(|(c, _)| c == cfg)
                .map(|(_, a)| *a)
                .ok_or_else(|| "unknown config".to_string())
        }
    }

    #[test]
    fn search_single_and_constraint_precedence() {
        let spec = ModelSpec::toy_llama();
        let a = DecompConfig::uniform([1], [0], 1);
        let b = DecompConfig::uniform([2], [0], 1);
        let cost = TableCost(vec![(a.clone(), 1.0, 1.0), (b.clone(), 0.1, 0.1)]);
        let acc = TableAccuracy(vec![(a.clone(), 0.99), (b.clone(), 0.5)], 1.0);
        let one = search(&spec, vec![a.clone()], &cost, &acc, 0.05).unwrap();
        assert_eq!(one.best.config, a);
        assert!(one.any_feasible);

        let two = search(&spec, vec![b.clone(), a.clone()], &cost, &acc, 0.05).unwrap();
        assert_eq!(two.best.config, a);
        assert_eq!(two.ranked[1].config, b);
        assert!(!two.ranked[1].feasible);

        let none = search(&spec, vec![b.clone()], &cost, &acc, 0.01).unwrap();
        assert!(!none.any_feasible);
        assert_eq!(none.best.config, b);
    }

    #[test]
    fn accuracy_improvement_is_always_feasible() {
        let spec = ModelSpec::toy_llama();
        let a = DecompConfig::uniform([1], [0], 1);
        let cost = TableCost(vec![(a.clone(), 1.0, 2.0)]);
        let acc = TableAccuracy(vec![(a.clone(), 1.2)], 1.0);
        let r = search(&spec, vec![a], &cost, &acc, 1e-12).unwrap();
        assert!(r.best.feasible);
        assert_eq!(r.best.accuracy_drop, 0.0);
        assert_eq!(r.best.edp, 2.0);
    }

    #[test]
    fn search_errors() {
        let spec = ModelSpec::toy_llama();
        let a = DecompConfig::uniform([1], [0], 1);
        let cost = TableCost(vec![]);
        let acc = TableAccuracy(vec![(a.clone(), 1.0)], 1.0);
        match search(&spec, vec![a.clone()], &cost, &acc, 0.1) {
            Err(DesignSpaceError::Provider { config, .. }) => assert_eq!(config, a.to_string()),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            search(&spec, vec![], &cost, &acc, 0.1),
            Err(DesignSpaceError::NoCandidates)
        );
        let bad = DecompConfig::uniform([9], [0], 1);
        assert!(matches!(
            search(&spec, vec![bad], &cost, &acc, 0.1),
            Err(DesignSpaceError::InvalidConfig(_))
        ));
    }

    struct Synthetic;
    impl CostProvider for Synthetic {
        fn cost(&self, cfg: &DecompConfig) -> Result<CostEstimate, String> {
            let n = cfg.layers().len() as f64;
            let t = cfg.tensors().iter().sum::<usize>() as f64;
            let r = cfg.uniform_rank().unwrap_or(0) as f64;
            Ok(CostEstimate {
                latency_s: 10.0 - n + 0.1 * r + 0.01 * t,
                energy_j: 5.0 - 0.3 * n + 0.05 * t,
            })
        }
    }
    impl AccuracyProvider for Synthetic {
        fn baseline(&self) -> Result<f64, String> {
            Ok(1.0)
        }
        fn accuracy(&self, cfg: &DecompConfig) -> Result<f64, String> {
            Ok(1.0 - 0.02 * cfg.layers().len() as f64 - 0.001 * cfg.tensors().len() as f64)
        }
    }

    #[test]
    fn search_matches_exhaustive_scan() {
        let spec = ModelSpec::toy_llama();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let candidates: Vec<DecompConfig> = (0..10)
                .map(|_| {
                    let layers: Vec<usize> = (0..4).filter(|_| rng.random_bool(0.5)).collect();
                    let layers = if layers.is_empty() {
                        vec![rng.random_range(0..4)]
                    } else {
                        layers
                    };
                    let tensors: Vec<usize> = (0..7).filter(|_| rng.random_bool(0.4)).collect();
                    let tensors = if tensors.is_empty() { vec![0] } else { tensors };
                    DecompConfig::uniform(layers, tensors, rng.random_range(1..4))
                })
                .collect();
            let tau = 0.05;
            let r = search(&spec, candidates.clone(), &Synthetic, &Synthetic, tau).unwrap();
            let mut best: Option<(f64, DecompConfig)> = None;
            for c in &candidates {
                let e = Synthetic.cost(c).unwrap();
                let drop = (1.0 - Synthetic.accuracy(c).unwrap()).max(0.0);
                if drop >= tau {
                    continue;
                }
                let edp = e.latency_s * e.energy_j;
                let better = match &best {
                    None => true,
                    Some((b, bc)) => edp < *b || (edp == *b && c < bc),
                };
                if better {
                    best = Some((edp, c.clone()));
                }
            }
            match best {
                Some((_, c)) => assert_eq!(r.best.config, c),
                None => assert!(!r.any_feasible),
            }
        }
    }

    #[test]
    fn config_document_roundtrip() {
        let spec = ModelSpec::llama2_7b();
        let cfg = DecompConfig::uniform([2, 8, 14, 20, 26], 0..7, 1);
        let doc = ConfigDocument::from_config(&cfg, &spec).unwrap();
        assert_eq!(doc.layers, vec![3, 9, 15, 21, 27]);
        let text = doc.to_toml_string();
        assert!(text.contains("pruned_rank = 1"));
        let back = ConfigDocument::from_toml_str(&text)
            .unwrap()
            .to_config(&spec)
            .unwrap();
        assert_eq!(back, cfg);
        let all = ConfigDocument {
            pruned_rank: 1,
            layers: vec![1],
            tensors: vec!["all".into()],
        };
        assert_eq!(all.to_config(&spec).unwrap().tensors().len(), 7);
        let zero = ConfigDocument {
            layers: vec![0],
            ..all.clone()
        };
        assert!(zero.to_config(&spec).is_err());
        let bad = ConfigDocument {
            tensors: vec!["W_X".into()],
            ..all
        };
        assert!(bad.to_config(&spec).is_err());
    }

    proptest! {
        #[test]
        fn enumerated_configs_are_valid_and_mutations_are_not(seed in any::<u64>()) {
            let spec = synthetic(3, 3, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let configs: Vec<_> = enumerate(&spec, &[1, 2, 3], &EnumFilter::default()).unwrap().collect();
            for c in &configs {
                prop_assert!(validate(c, &spec).is_valid());
            }
            let base = configs[rng.random_range(1..configs.len())].clone();
            let layers: Vec<usize> = base.layers().iter().copied().collect();
            let tensors: Vec<usize> = base.tensors().iter().copied().collect();
            let mut triples: Vec<PrunedRank> = base.pruned_ranks().iter().copied().collect();
            let mutated = match rng.random_range(0..5) {
                0 => { triples[0].rank = 0; DecompConfig::from_parts(layers, tensors, triples) }
                1 => { triples[0].rank = 4; DecompConfig::from_parts(layers, tensors, triples) }
                2 => { triples.remove(0); DecompConfig::from_parts(layers, tensors, triples) }
                3 => { triples.push(PrunedRank { layer: 7, tensor: 0, rank: 1 }); DecompConfig::from_parts(layers, tensors, triples) }
                _ => { let mut l = layers; l.push(5); DecompConfig::from_parts(l, tensors, triples) }
            };
            prop_assert!(!validate(&mutated, &spec).is_valid());
        }
    }
}
