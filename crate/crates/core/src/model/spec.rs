//! Architecture descriptions: layer count, per-layer decomposable weight
//! roles with their shapes, and the parameters that are never decomposed.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// BERT-style encoder; no LM head in the MAC count.
    Encoder,
    /// Llama-style decoder with an untied LM head.
    Decoder,
    /// Desk-scale Llama-style model used by the forward pass.
    Toy,
}

impl Family {
    pub fn has_lm_head(self) -> bool {
        !matches!(self, Family::Encoder)
    }
}

/// One decomposable weight tensor per layer. The layer computes `x · W` with
/// `W` shaped `rows × cols` (input features × output features).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRole {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl TensorRole {
    fn new(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
        }
    }

    /// Maximal rank of the weight, `min(rows, cols)`.
    pub fn rank(&self) -> usize {
        self.rows.min(self.cols)
    }

    pub fn params(&self) -> u64 {
        (self.rows * self.cols) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    /// Embeddings, norms, biases, pooler and LM head: everything outside `roles`.
    pub non_decomposable_params: u64,
    /// Role id is the position in this list.
    pub roles: Vec<TensorRole>,
}

pub const LLAMA_ROLES: [&str; 7] = ["W_Q", "W_K", "W_V", "W_SO", "W_G", "W_U", "W_D"];
pub const BERT_ROLES: [&str; 6] = ["W_Q", "W_K", "W_V", "W_SO", "W_Int", "W_O"];

impl ModelSpec {
    /// Llama-style decoder: RMSNorm pre-norms, untied embedding and LM head,
    /// no biases. `kv_dim` is the key/value projection width (grouped-query attention).
    #[allow(clippy::too_many_arguments)]
    pub fn llama_style(
        name: &str,
        family: Family,
        n_layers: usize,
        hidden: usize,
        n_heads: usize,
        kv_dim: usize,
        ffn: usize,
        vocab: usize,
    ) -> Self {
        let roles = vec![
            TensorRole::new("W_Q", hidden, hidden),
            TensorRole::new("W_K", hidden, kv_dim),
            TensorRole::new("W_V", hidden, kv_dim),
            TensorRole::new("W_SO", hidden, hidden),
            TensorRole::new("W_G", hidden, ffn),
            TensorRole::new("W_U", hidden, ffn),
            TensorRole::new("W_D", ffn, hidden),
        ];
        let (h, v, l) = (hidden as u64, vocab as u64, n_layers as u64);
        let non_decomposable = 2 * v * h + 2 * h * l + h;
        Self {
            name: name.to_string(),
            family,
            n_layers,
            hidden,
            n_heads,
            ffn,
            vocab,
            non_decomposable_params: non_decomposable,
            roles,
        }
    }

    /// BERT-style encoder with learned position and token-type embeddings,
    /// post-LayerNorm blocks with biases, and the pooler.
    pub fn bert_style(
        name: &str,
        n_layers: usize,
        hidden: usize,
        n_heads: usize,
        ffn: usize,
        vocab: usize,
    ) -> Self {
        const MAX_POSITIONS: u64 = 512;
        const TOKEN_TYPES: u64 = 2;
        let roles = vec![
            TensorRole::new("W_Q", hidden, hidden),
            TensorRole::new("W_K", hidden, hidden),
            TensorRole::new("W_V", hidden, hidden),
            TensorRole::new("W_SO", hidden, hidden),
            TensorRole::new("W_Int", hidden, ffn),
            TensorRole::new("W_O", ffn, hidden),
        ];
        let (h, f, v, l) = (hidden as u64, ffn as u64, vocab as u64, n_layers as u64);
        let embeddings = (v + MAX_POSITIONS + TOKEN_TYPES) * h + 2 * h;
        let per_layer_biases = 4 * h + f + h;
        let per_layer_norms = 2 * 2 * h;
        let pooler = h * h + h;
        Self {
            name: name.to_string(),
            family: Family::Encoder,
            n_layers,
            hidden,
            n_heads,
            ffn,
            vocab,
            non_decomposable_params: embeddings + l * (per_layer_biases + per_layer_norms) + pooler,
            roles,
        }
    }

    pub fn bert_base() -> Self {
        Self::bert_style("bert_base", 12, 768, 12, 3072, 30522)
    }

    pub fn bert_large() -> Self {
        Self::bert_style("bert_large", 24, 1024, 16, 4096, 30522)
    }

    pub fn llama2_7b() -> Self {
        Self::llama_style(
            "llama2_7b",
            Family::Decoder,
            32,
            4096,
            32,
            4096,
            11008,
            32000,
        )
    }

    pub fn llama2_70b() -> Self {
        Self::llama_style(
            "llama2_70b",
            Family::Decoder,
            80,
            8192,
            64,
            1024,
            28672,
            32000,
        )
    }

    pub fn toy_llama() -> Self {
        Self::llama_style("toy_llama", Family::Toy, 4, 64, 4, 64, 172, 256)
    }

    /// Llama2-7B topology (32 layers, 7 roles) with every width divided by `divisor`,
    /// small enough to materialize and decompose at desk scale.
    pub fn llama2_7b_scaled(divisor: usize) -> Self {
        Self::llama_style(
            &format!("llama2_7b_div{divisor}"),
            Family::Decoder,
            32,
            4096 / divisor,
            (32 / divisor).max(1),
            4096 / divisor,
            11008 / divisor,
            32000 / divisor,
        )
    }

    /// Looks up one of the built-in specs by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "bert_base" => Some(Self::bert_base()),
            "bert_large" => Some(Self::bert_large()),
            "llama2_7b" => Some(Self::llama2_7b()),
            "llama2_70b" => Some(Self::llama2_70b()),
            "toy_llama" => Some(Self::toy_llama()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "bert_base",
            "bert_large",
            "llama2_7b",
            "llama2_70b",
            "toy_llama",
        ]
    }

    pub fn n_tensors(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, id: usize) -> Option<&TensorRole> {
        self.roles.get(id)
    }

    pub fn role_id(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.name == name)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn decomposable_params_per_layer(&self) -> u64 {
        self.roles.iter().map(TensorRole::params).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.decomposable_params_per_layer() * self.n_layers as u64 + self.non_decomposable_params
    }

    /// Smallest maximal rank over all roles, the rank budget used when sizing the design space.
    pub fn min_role_rank(&self) -> usize {
        self.roles.iter().map(TensorRole::rank).min().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.roles.is_empty() {
            return fail("at least one tensor role is required".into());
        }
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return fail(format!(
                "hidden size {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            ));
        }
        let mut seen = HashSet::new();
        for r in &self.roles {
            if !seen.insert(r.name.as_str()) {
                return fail(format!("duplicate role name {}", r.name));
            }
            if r.rows == 0 || r.cols == 0 {
                return fail(format!("role {} has a zero dimension", r.name));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = toml::from_str(s).map_err(|e| ModelError::Document(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Resolves a built-in name, or else reads a spec document from disk.
    pub fn resolve(name_or_path: &str) -> Result<Self, ModelError> {
        if let Some(spec) = Self::builtin(name_or_path) {
            return Ok(spec);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(ModelError::UnknownSpec(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llama2_7b_counts() {
        let s = ModelSpec::llama2_7b();
        assert_eq!(s.n_tensors(), 7);
        assert_eq!(s.decomposable_params_per_layer(), 202_375_168);
        assert_eq!(s.total_params(), 6_738_415_616);
        let gb = s.total_params() as f64 * 2.0 / 1e9;
        assert!((gb - 13.4).abs() / 13.4 < 0.02);
    }

    #[test]
    fn bert_base_counts() {
        let s = ModelSpec::bert_base();
        assert_eq!(s.n_tensors(), 6);
        assert_eq!(s.total_params(), 109_482_240);
        let mb = s.total_params() as f64 * 2.0 / 1e6;
        assert!((mb - 219.0).abs() < 0.5);
    }

    #[test]
    fn toy_llama_matches_hand_count() {
        let s = ModelSpec::toy_llama();
        // embed + head: 2·256·64; per layer: 4·64² + 3·64·172 + 2·64 norms; final norm 64.
        let expected = 2 * 256 * 64 + 4 * (4 * 64 * 64 + 3 * 64 * 172 + 2 * 64) + 64;
        assert_eq!(s.total_params(), expected as u64);
        assert_eq!(s.head_dim(), 16);
    }

    #[test]
    fn role_names_follow_families() {
        let l = ModelSpec::llama2_7b();
        let names: Vec<&str> = l.roles.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, LLAMA_ROLES);
        let b = ModelSpec::bert_base();
        let names: Vec<&str> = b.roles.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, BERT_ROLES);
        assert_eq!(ModelSpec::llama2_70b().role(1).unwrap().cols, 1024);
    }

    #[test]
    fn toml_roundtrip_and_validation() {
        let s = ModelSpec::toy_llama();
        let text = s.to_toml_string();
        assert_eq!(ModelSpec::from_toml_str(&text).unwrap(), s);

        let mut dup = s.clone();
        dup.roles[1].name = "W_Q".into();
        assert!(dup.validate().is_err());
        let mut zero = s.clone();
        zero.roles[0].rows = 0;
        assert!(zero.validate().is_err());
        let mut heads = s;
        heads.n_heads = 5;
        assert!(heads.validate().is_err());
    }

    #[test]
    fn resolve_unknown_name() {
        assert!(matches!(
            ModelSpec::resolve("no_such_model"),
            Err(ModelError::UnknownSpec(_))
        ));
        for name in ModelSpec::builtin_names() {
            ModelSpec::resolve(name).unwrap().validate().unwrap();
        }
    }
}
