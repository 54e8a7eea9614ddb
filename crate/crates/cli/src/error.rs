//! Exit codes and the one-line error report printed on failure.

use std::fmt;
use std::path::Path;

use lrdk_core::compress::CompressError;
use lrdk_core::design_space::DesignSpaceError;
use lrdk_core::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    InvalidConfig,
    InvalidInput,
    Io,
    CorruptCheckpoint,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::InvalidConfig | Kind::InvalidInput => 2,
            Kind::Io | Kind::CorruptCheckpoint => 3,
            Kind::Numerical => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::InvalidConfig => "invalid-config",
            Kind::InvalidInput => "invalid-input",
            Kind::Io => "io",
            Kind::CorruptCheckpoint => "corrupt-checkpoint",
            Kind::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::InvalidConfig, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Kind::InvalidInput, message)
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    /// `error: code=<n> kind=<kind> message=<text>` with the message on a single line.
    pub fn report_line(&self) -> String {
        format!(
            "error: code={} kind={} message={}",
            self.kind.exit_code(),
            self.kind.name(),
            self.message.replace('\n', " ")
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Io(_) => Kind::Io,
            ModelError::BadMagic(_)
            | ModelError::UnsupportedVersion(_)
            | ModelError::Truncated { .. }
            | ModelError::DuplicateName(_)
            | ModelError::Malformed(_) => Kind::CorruptCheckpoint,
            ModelError::Numerical { .. } => Kind::Numerical,
            ModelError::InvalidConfig(_) | ModelError::AlreadyDecomposed(_) => Kind::InvalidConfig,
            _ => Kind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        let kind = match &e {
            CompressError::InvalidConfig(_) | CompressError::PrOutOfRange { .. } => {
                Kind::InvalidConfig
            }
            _ => Kind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DesignSpaceError> for CliError {
    fn from(e: DesignSpaceError) -> Self {
        let kind = match &e {
            DesignSpaceError::Provider { .. } => Kind::Numerical,
            DesignSpaceError::NoCandidates | DesignSpaceError::TooManyAxes(_) => Kind::InvalidInput,
            _ => Kind::InvalidConfig,
        };
        Self::new(kind, e.to_string())
    }
}
