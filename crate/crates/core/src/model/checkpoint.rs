//! The LRDK binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LRDK" | version u32 | count u32
//! count × { name_len u16 | name | dtype u8 | ndim u8 | dims u64×ndim | offset u64 }
//! meta_len u32 | metadata (JSON: spec, precision, decompositions)
//! zero padding, then each tensor's row-major data at its 64-byte aligned offset
//! ```
//!
//! Dtype codes are 0 = f64, 1 = f32, 2 = f16. Records appear in name order, so
//! the same checkpoint always serializes to the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Family, ModelError, ModelSpec};
use crate::design_space::{validate, DecompConfig};
use crate::precision::Precision;
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::tucker2d;

pub const MAGIC: [u8; 4] = *b"LRDK";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: u64 = 64;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactorPart {
    A,
    B,
    C,
}

impl FactorPart {
    pub const ALL: [FactorPart; 3] = [FactorPart::A, FactorPart::B, FactorPart::C];

    fn suffix(self) -> &'static str {
        match self {
            FactorPart::A => "A",
            FactorPart::B => "B",
            FactorPart::C => "C",
        }
    }
}

/// A parsed tensor name. Layer indices are 0-indexed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorName {
    Embed,
    LmHead,
    FinalNorm,
    AttnNorm(usize),
    MlpNorm(usize),
    Dense {
        layer: usize,
        role: String,
    },
    Factor {
        layer: usize,
        role: String,
        part: FactorPart,
    },
}

impl fmt::Display for TensorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorName::Embed => f.write_str("embed"),
            TensorName::LmHead => f.write_str("lm_head"),
            TensorName::FinalNorm => f.write_str("final_norm"),
            TensorName::AttnNorm(l) => write!(f, "layer.{l}.attn_norm"),
            TensorName::MlpNorm(l) => write!(f, "layer.{l}.mlp_norm"),
            TensorName::Dense { layer, role } => write!(f, "layer.{layer}.{role}"),
            TensorName::Factor { layer, role, part } => {
                write!(f, "layer.{layer}.{role}.{}", part.suffix())
            }
        }
    }
}

impl FromStr for TensorName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "embed" => return Ok(TensorName::Embed),
            "lm_head" => return Ok(TensorName::LmHead),
            "final_norm" => return Ok(TensorName::FinalNorm),
            _ => {}
        }
        let rest = s.strip_prefix("layer.").ok_or(())?;
        let (idx, tail) = rest.split_once('.').ok_or(())?;
        if idx.is_empty()
            || !idx.bytes().all(|b| b.is_ascii_digit())
            || (idx.len() > 1 && idx.starts_with('0'))
        {
            return Err(());
        }
        let layer: usize = idx.parse().map_err(|_| ())?;
        match tail {
            "attn_norm" => return Ok(TensorName::AttnNorm(layer)),
            "mlp_norm" => return Ok(TensorName::MlpNorm(layer)),
            _ => {}
        }
        let (role, part) = match tail.rsplit_once('.') {
            Some((role, "A")) => (role, Some(FactorPart::A)),
            Some((role, "B")) => (role, Some(FactorPart::B)),
            Some((role, "C")) => (role, Some(FactorPart::C)),
            Some(_) => return Err(()),
            None => (tail, None),
        };
        if role.is_empty() {
            return Err(());
        }
        let role = role.to_string();
        Ok(match part {
            Some(part) => TensorName::Factor { layer, role, part },
            None => TensorName::Dense { layer, role },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    spec: ModelSpec,
    precision: Precision,
    #[serde(default)]
    decompositions: Vec<DecompConfig>,
}

/// Named weights bound to a [`ModelSpec`]. Values are held in f64 and
/// converted to `precision` when written.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    spec: ModelSpec,
    precision: Precision,
    entries: BTreeMap<String, DenseTensor>,
    decompositions: Vec<DecompConfig>,
}

/// Rounds to the nearest value representable at `p` (ties to even).
fn quantize(v: f64, p: Precision) -> f64 {
    match p {
        Precision::F64 => v,
        Precision::F32 => v as f32 as f64,
        Precision::F16 => f16::from_f64(v).to_f64(),
    }
}

fn quantized(t: DenseTensor, p: Precision) -> DenseTensor {
    if p == Precision::F64 {
        return t;
    }
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(|v| quantize(v, p)).collect();
    DenseTensor::new(shape, data).expect("shape unchanged")
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, precision: Precision) -> Result<Self, ModelError> {
        spec.validate()?;
        Ok(Self {
            spec,
            precision,
            entries: BTreeMap::new(),
            decompositions: Vec::new(),
        })
    }

    /// Seeded Gaussian weights (σ = 0.02) for every Llama-style tensor, norms at 1.
    /// Values are rounded to `precision`, so a save/load cycle is lossless.
    pub fn random(spec: &ModelSpec, precision: Precision, seed: u64) -> Result<Self, ModelError> {
        if spec.family == Family::Encoder {
            return Err(ModelError::Unsupported(format!(
                "random checkpoints cover decoder-style layouts only; {} is an encoder",
                spec.name
            )));
        }
        let mut ckpt = Self::new(spec.clone(), precision)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut names = vec![TensorName::Embed];
        for layer in 0..spec.n_layers {
            names.push(TensorName::AttnNorm(layer));
            names.push(TensorName::MlpNorm(layer));
            names.extend(spec.roles.iter().map(|r| TensorName::Dense {
                layer,
                role: r.name.clone(),
            }));
        }
        names.push(TensorName::FinalNorm);
        names.push(TensorName::LmHead);
        for name in names {
            let shape = ckpt
                .expected_shape(&name)
                .expect("generated names fit the spec");
            let len = shape.iter().product();
            let data = match name {
                TensorName::AttnNorm(_) | TensorName::MlpNorm(_) | TensorName::FinalNorm => {
                    vec![1.0; len]
                }
                _ => (0..len)
                    .map(|_| quantize(normal.sample(&mut rng), precision))
                    .collect(),
            };
            ckpt.entries.insert(
                name.to_string(),
                DenseTensor::new(shape, data).expect("positive dims"),
            );
        }
        Ok(ckpt)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn entries(&self) -> &BTreeMap<String, DenseTensor> {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.get(name)
    }

    /// Decomposition configs applied so far, oldest first.
    pub fn decompositions(&self) -> &[DecompConfig] {
        &self.decompositions
    }

    pub fn param_count(&self) -> u64 {
        self.entries.values().map(|t| t.len() as u64).sum()
    }

    /// Shape a tensor of this name must have. Factor `A`/`C` rank columns are
    /// free, so those entries carry the stored rank; `None` marks an unknown name.
    fn expected_shape(&self, name: &TensorName) -> Option<Vec<usize>> {
        let s = &self.spec;
        let layer_ok = |l: &usize| *l < s.n_layers;
        match name {
            TensorName::Embed => Some(vec![s.vocab, s.hidden]),
            TensorName::LmHead => Some(vec![s.hidden, s.vocab]),
            TensorName::FinalNorm => Some(vec![s.hidden]),
            TensorName::AttnNorm(l) | TensorName::MlpNorm(l) => layer_ok(l).then(|| vec![s.hidden]),
            TensorName::Dense { layer, role } => {
                let r = s.roles.iter().find(|r| &r.name == role)?;
                layer_ok(layer).then(|| vec![r.rows, r.cols])
            }
            TensorName::Factor { layer, role, .. } => {
                let r = s.roles.iter().find(|r| &r.name == role)?;
                layer_ok(layer).then(|| vec![r.rows, r.cols])
            }
        }
    }

    fn check_entry(&self, name: &str, t: &DenseTensor) -> Result<TensorName, ModelError> {
        let unknown = || ModelError::UnknownTensor {
            name: name.to_string(),
            spec: self.spec.name.clone(),
        };
        let parsed: TensorName = name.parse().map_err(|_| unknown())?;
        let expected = self.expected_shape(&parsed).ok_or_else(unknown)?;
        let actual = t.shape().to_vec();
        let mismatch = || ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.clone(),
            actual: actual.clone(),
        };
        match &parsed {
            TensorName::Factor { part, .. } => {
                let (h, w) = (expected[0], expected[1]);
                let ok = actual.len() == 2
                    && match part {
                        FactorPart::A => actual[0] == h && actual[1] <= h.min(w),
                        FactorPart::B => actual[0] == actual[1] && actual[0] <= h.min(w),
                        FactorPart::C => actual[1] == w && actual[0] <= h.min(w),
                    };
                if !ok {
                    return Err(mismatch());
                }
            }
            _ if actual != expected => return Err(mismatch()),
            _ => {}
        }
        Ok(parsed)
    }

    /// Adds a tensor after checking its name and shape against the spec and
    /// that the weight is not already present in the other (dense or factored) form.
    pub fn insert(&mut self, name: &str, t: DenseTensor) -> Result<(), ModelError> {
        let parsed = self.check_entry(name, &t)?;
        if self.entries.contains_key(name) {
            return Err(ModelError::DuplicateName(name.to_string()));
        }
        match &parsed {
            TensorName::Dense { layer, role } => {
                if FactorPart::ALL
                    .iter()
                    .any(|&part| self.entries.contains_key(&factor_name(*layer, role, part)))
                {
                    return Err(ModelError::Layout(format!(
                        "{name} is present in factored form"
                    )));
                }
            }
            TensorName::Factor { layer, role, .. }
                if self.entries.contains_key(&dense_name(*layer, role)) =>
            {
                return Err(ModelError::Layout(format!(
                    "{} is present in dense form",
                    dense_name(*layer, role)
                )));
            }
            _ => {}
        }
        self.entries.insert(name.to_string(), t);
        Ok(())
    }

    /// Every factored weight has all three parts with matching ranks.
    pub fn check_layout(&self) -> Result<(), ModelError> {
        for name in self.entries.keys() {
            let Ok(TensorName::Factor { layer, role, .. }) = name.parse::<TensorName>() else {
                continue;
            };
            let parts: Vec<Option<&DenseTensor>> = FactorPart::ALL
                .iter()
                .map(|&p| self.entries.get(&factor_name(layer, &role, p)))
                .collect();
            let (Some(a), Some(b), Some(c)) = (parts[0], parts[1], parts[2]) else {
                return Err(ModelError::Layout(format!(
                    "layer.{layer}.{role} is missing factor parts"
                )));
            };
            let pr = a.shape()[1];
            if b.shape() != [pr, pr] || c.shape()[0] != pr {
                return Err(ModelError::Layout(format!(
                    "layer.{layer}.{role} factors disagree on the pruned rank"
                )));
            }
        }
        Ok(())
    }

    /// `(A, B, C)` for a factored weight, or `None` when the weight is dense or absent.
    pub fn factors(
        &self,
        layer: usize,
        role: &str,
    ) -> Option<(&DenseTensor, &DenseTensor, &DenseTensor)> {
        let get = |p| self.entries.get(&factor_name(layer, role, p));
        Some((
            get(FactorPart::A)?,
            get(FactorPart::B)?,
            get(FactorPart::C)?,
        ))
    }

    /// Copy with every factored weight multiplied back out to a dense `A·B·C`.
    /// The products are kept at full f64 precision.
    pub fn densified(&self) -> Result<Checkpoint, ModelError> {
        self.check_layout()?;
        let mut out = self.clone();
        let mut factored = Vec::new();
        for name in self.entries.keys() {
            if let Ok(TensorName::Factor {
                layer,
                role,
                part: FactorPart::A,
            }) = name.parse::<TensorName>()
            {
                factored.push((layer, role));
            }
        }
        for (layer, role) in factored {
            let (a, b, c) = self.factors(layer, &role).expect("layout checked");
            let to_m = |t: &DenseTensor| t.to_matrix().expect("order 2");
            let w = to_m(a)
                .matmul(&to_m(b))
                .and_then(|ab| ab.matmul(&to_m(c)))
                .map_err(|e| ModelError::Layout(e.to_string()))?;
            for p in FactorPart::ALL {
                out.entries.remove(&factor_name(layer, &role, p));
            }
            out.entries
                .insert(dense_name(layer, &role), w.into_tensor());
        }
        Ok(out)
    }

    fn metadata(&self) -> Metadata {
        Metadata {
            spec: self.spec.clone(),
            precision: self.precision,
            decompositions: self.decompositions.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata()).expect("metadata serializes");
        let mut header = Vec::new();
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());

        let records_len: u64 = self
            .entries
            .iter()
            .map(|(n, t)| 2 + n.len() as u64 + 2 + 8 * t.order() as u64 + 8)
            .sum();
        let meta_end = header.len() as u64 + records_len + 4 + meta.len() as u64;
        let elem = self.precision.bytes();
        let mut offset = meta_end.next_multiple_of(ALIGN);
        let mut offsets = Vec::with_capacity(self.entries.len());
        for t in self.entries.values() {
            offsets.push(offset);
            offset = (offset + t.len() as u64 * elem).next_multiple_of(ALIGN);
        }

        for ((name, t), &off) in self.entries.iter().zip(&offsets) {
            header.extend_from_slice(&(name.len() as u16).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.push(self.precision.code());
            header.push(t.order() as u8);
            for &d in t.shape() {
                header.extend_from_slice(&(d as u64).to_le_bytes());
            }
            header.extend_from_slice(&off.to_le_bytes());
        }
        header.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        header.extend_from_slice(&meta);

        let mut out = header;
        for (t, &off) in self.entries.values().zip(&offsets) {
            out.resize(off as usize, 0);
            for &v in t.data() {
                match self.precision {
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F16 => out.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(ModelError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let precision = Precision::from_code(dtype).ok_or_else(|| {
                ModelError::Malformed(format!("unknown dtype code {dtype} for {name}"))
            })?;
            let ndim = r.u8()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let offset = r.u64()?;
            records.push((name, precision, dims, offset));
        }
        let meta_len = r.u32()? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| ModelError::Malformed(format!("metadata: {e}")))?;

        let mut seen = std::collections::HashSet::new();
        for (name, ..) in &records {
            if !seen.insert(name.as_str()) {
                return Err(ModelError::DuplicateName(name.clone()));
            }
        }

        let mut ckpt = Checkpoint::new(meta.spec, meta.precision)?;
        ckpt.decompositions = meta.decompositions;
        for (name, precision, dims, offset) in records {
            if precision != ckpt.precision {
                return Err(ModelError::Malformed(format!(
                    "{name} is stored as {precision}, checkpoint precision is {}",
                    ckpt.precision
                )));
            }
            let len = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| ModelError::Malformed(format!("{name} has an overflowing shape")))?;
            let nbytes = len
                .checked_mul(precision.bytes())
                .ok_or_else(|| ModelError::Malformed(format!("{name} has an overflowing shape")))?;
            let end = offset.saturating_add(nbytes);
            if end > bytes.len() as u64 {
                return Err(ModelError::Truncated {
                    needed: end,
                    available: bytes.len() as u64,
                });
            }
            let raw = &bytes[offset as usize..end as usize];
            let data: Vec<f64> = match precision {
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Precision::F16 => raw
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().expect("2 bytes")).to_f64())
                    .collect(),
            };
            let t = DenseTensor::new(dims, data)
                .map_err(|e| ModelError::Malformed(format!("{name}: {e}")))?;
            ckpt.insert(&name, t)?;
        }
        ckpt.check_layout()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn dense_name(layer: usize, role: &str) -> String {
    TensorName::Dense {
        layer,
        role: role.to_string(),
    }
    .to_string()
}

pub(crate) fn factor_name(layer: usize, role: &str, part: FactorPart) -> String {
    TensorName::Factor {
        layer,
        role: role.to_string(),
        part,
    }
    .to_string()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.saturating_add(n);
        if end > self.bytes.len() {
            return Err(ModelError::Truncated {
                needed: end as u64,
                available: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Replaces every weight selected by `cfg` with its order-2 Tucker factors
/// `{A: H×PR, B: PR×PR, C: PR×W}`. Untouched tensors are carried over as is.
pub fn apply_decomposition(
    ckpt: &Checkpoint,
    cfg: &DecompConfig,
) -> Result<Checkpoint, ModelError> {
    let verdict = validate(cfg, &ckpt.spec);
    if !verdict.is_valid() {
        return Err(ModelError::InvalidConfig(verdict.violations));
    }
    if cfg.is_empty() {
        return Ok(ckpt.clone());
    }

    let mut targets = Vec::with_capacity(cfg.pruned_ranks().len());
    for p in cfg.pruned_ranks() {
        let role = ckpt.spec.roles[p.tensor].name.clone();
        let name = dense_name(p.layer, &role);
        let Some(w) = ckpt.entries.get(&name) else {
            if ckpt.factors(p.layer, &role).is_some() {
                return Err(ModelError::AlreadyDecomposed(name));
            }
            return Err(ModelError::MissingTensor(name));
        };
        targets.push((p.layer, role, name, w, p.rank));
    }

    let factored: Vec<(usize, String, String, Matrix, Matrix, Matrix)> = targets
        .into_par_iter()
        .map(|(layer, role, name, w, pr)| {
            let m = w
                .to_matrix()
                .map_err(|e| ModelError::Layout(e.to_string()))?;
            let f = tucker2d(&m, pr).map_err(|e| ModelError::Numerical {
                name: name.clone(),
                message: e.to_string(),
            })?;
            let (a, b, c) = f.as_matrix_chain().expect("order-2 factors");
            Ok((layer, role, name, a, b, c))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut out = ckpt.clone();
    for (layer, role, name, a, b, c) in factored {
        out.entries.remove(&name);
        for (part, m) in FactorPart::ALL.into_iter().zip([a, b, c]) {
            out.entries.insert(
                factor_name(layer, &role, part),
                quantized(m.into_tensor(), out.precision),
            );
        }
    }
    out.decompositions.push(cfg.clone());
    Ok(out)
}
