use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unbalanced brackets at position {position}")]
    UnbalancedBrackets { position: usize },
    #[error("illegal character {found:?} at position {position}")]
    IllegalCharacter { found: char, position: usize },
    #[error("pair ({i},{j}) encloses fewer than {} unpaired bases", min_loop + 1)]
    HairpinTooSmall { i: usize, j: usize, min_loop: usize },
    #[error("empty structure")]
    EmptyStructure,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input of {len} characters exceeds the limit of {limit}")]
    InputTooLong { len: usize, limit: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("illegal nucleotide {found:?} at position {position}")]
    IllegalNucleotide { found: char, position: usize },
    #[error("sequence is not a valid design: positions ({i},{j}) form {pair}")]
    InvalidDesign { i: usize, j: usize, pair: String },
    #[error("length {len} exceeds the enumeration limit of {limit}")]
    TooLong { len: usize, limit: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {pair:?} is not one of CG, GC, AU, UA, GU, UG")]
    MissingPairType { line: usize, pair: String },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("thermodynamic evaluation failed: {0}")]
    EvaluationFailed(String),
    #[error("all admissible logits are non-finite at step {step}")]
    AllMaskedLogitsNonFinite { step: usize },
    #[error("non-finite loss at step {step}")]
    DivergenceDetected { step: usize },

    #[error("sequence of {len} tokens exceeds the context window of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor {name:?}: {message}")]
    ShapeMismatch { name: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EvaluationFailed(_)
            | Error::AllMaskedLogitsNonFinite { .. }
            | Error::DivergenceDetected { .. } => ErrorClass::Numerical,
            Error::Usage(_) | Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::Row { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnbalancedBrackets { .. } => "unbalanced_brackets",
            Error::IllegalCharacter { .. } => "illegal_character",
            Error::HairpinTooSmall { .. } => "hairpin_too_small",
            Error::EmptyStructure => "empty_structure",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InputTooLong { .. } => "input_too_long",
            Error::EmptyTestSet => "empty_test_set",
            Error::IllegalNucleotide { .. } => "illegal_nucleotide",
            Error::InvalidDesign { .. } => "invalid_design",
            Error::TooLong { .. } => "too_long",
            Error::Parse { .. } => "parse_error",
            Error::UnknownKey { .. } => "unknown_key",
            Error::MissingPairType { .. } => "missing_pair_type",
            Error::InvalidParams(_) => "invalid_params",
            Error::EvaluationFailed(_) => "evaluation_failed",
            Error::AllMaskedLogitsNonFinite { .. } => "masked_logits_non_finite",
            Error::DivergenceDetected { .. } => "divergence",
            Error::ContextOverflow { .. } => "context_overflow",
            Error::InvalidConfig(_) => "invalid_config",
            Error::BadMagic => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Io { .. } => "io",
            Error::Usage(_) => "usage",
            Error::Row { source, .. } => source.code(),
        }
    }
}
