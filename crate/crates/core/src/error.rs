use thiserror::Error;

/// Errors produced by the codec, channel bank, detector and experiment runner.
#[derive(Debug, Error)]
pub enum SkedaError {
    #[error("replication factors {factors:?} do not divide latent dims {dims:?}")]
    NonDividingFactors { dims: [usize; 4], factors: [usize; 4] },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("value outside domain: {0}")]
    DomainError(String),

    #[error("non-finite value at element {0}")]
    NonFiniteInput(usize),

    #[error("no frames supplied")]
    NoFrames,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid channel parameters: {0}")]
    BadParams(String),

    #[error("parameter grid is empty")]
    EmptyGrid,

    #[error("user registry is empty")]
    EmptyRegistry,

    #[error("malformed key file: {0}")]
    MalformedKeyFile(String),

    #[error("malformed latent file: {0}")]
    MalformedLatentFile(String),

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SkedaError {
    /// Stable variant name, used in JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            SkedaError::NonDividingFactors { .. } => "NonDividingFactors",
            SkedaError::LengthMismatch { .. } => "LengthMismatch",
            SkedaError::ShapeMismatch(_) => "ShapeMismatch",
            SkedaError::DimMismatch(_) => "DimMismatch",
            SkedaError::DomainError(_) => "DomainError",
            SkedaError::NonFiniteInput(_) => "NonFiniteInput",
            SkedaError::NoFrames => "NoFrames",
            SkedaError::EmptyInput => "EmptyInput",
            SkedaError::BadParams(_) => "BadParams",
            SkedaError::EmptyGrid => "EmptyGrid",
            SkedaError::EmptyRegistry => "EmptyRegistry",
            SkedaError::MalformedKeyFile(_) => "MalformedKeyFile",
            SkedaError::MalformedLatentFile(_) => "MalformedLatentFile",
            SkedaError::VersionMismatch { .. } => "VersionMismatch",
            SkedaError::ConfigError(_) => "ConfigError",
            SkedaError::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, SkedaError>;
