//! Architecture specs, the LRDK checkpoint format, decomposition of stored
//! weights, the toy forward pass and the logit-divergence proxy.

mod checkpoint;
mod divergence;
mod forward;
mod spec;

use thiserror::Error;

use crate::design_space::Violation;

pub use checkpoint::{
    apply_decomposition, Checkpoint, FactorPart, TensorName, FORMAT_VERSION, MAGIC,
};
pub use divergence::{logit_divergence, DivergenceOptions, DivergenceReport};
pub use forward::{toy_forward, ToyModel};
pub use spec::{Family, ModelSpec, TensorRole, BERT_ROLES, LLAMA_ROLES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("spec document: {0}")]
    Document(String),
    #[error("unknown model spec '{0}' (not a built-in name or a readable file)")]
    UnknownSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"LRDK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: need {needed} bytes, file has {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("duplicate tensor name '{0}'")]
    DuplicateName(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor name '{name}' does not fit spec {spec}")]
    UnknownTensor { name: String, spec: String },
    #[error("tensor '{name}' has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor layout: {0}")]
    Layout(String),
    #[error("missing tensor '{0}'")]
    MissingTensor(String),
    #[error("tensor '{0}' is already decomposed")]
    AlreadyDecomposed(String),
    #[error("invalid decomposition config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error("decomposing '{name}' failed: {message}")]
    Numerical { name: String, message: String },
    #[error("checkpoints bind different specs ({left} vs {right})")]
    SpecMismatch { left: String, right: String },
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
