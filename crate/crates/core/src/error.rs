use thiserror::Error;

/// Everything that can go wrong between raw CSV tables and a report.
///
/// Each variant maps onto a stable category name (see [`CetError::category`])
/// that the CLI prints on failure, and onto one of the process exit codes.
#[derive(Debug, Error)]
pub enum CetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: bad timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },
    #[error("row {row}: bad value `{value}` for {field}")]
    BadEnum {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("duplicate stay_id `{0}`")]
    DuplicateStayId(String),
    #[error("row {row}: unknown signal `{value}`")]
    BadSignalToken { row: usize, value: String },
    #[error("row {row}: bad numeric value `{value}`")]
    BadValue { row: usize, value: String },
    #[error("intime precedes the estimated birth date")]
    NegativeAge,
    #[error("feature `{0}` has no present values in the training rows")]
    AllMissingFeature(String),
    #[error("split fraction {0} leaves one side empty")]
    DegenerateFraction(f64),
    #[error("{n} samples cannot be divided into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("class id {0} outside 0..16")]
    BadClassId(u32),
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} features per row, got {got}")]
    PreprocessMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("ROC-AUC needs both positive and negative examples")]
    SingleClass,
    #[error("artifact format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CetError>;

impl CetError {
    /// Stable machine-parseable name of the error kind.
    pub fn category(&self) -> &'static str {
        match self {
            CetError::MissingColumn(_) => "MissingColumn",
            CetError::BadTimestamp { .. } => "BadTimestamp",
            CetError::BadEnum { .. } => "BadEnum",
            CetError::DuplicateStayId(_) => "DuplicateStayId",
            CetError::BadSignalToken { .. } => "BadSignalToken",
            CetError::BadValue { .. } => "BadValue",
            CetError::NegativeAge => "NegativeAge",
            CetError::AllMissingFeature(_) => "AllMissingFeature",
            CetError::DegenerateFraction(_) => "DegenerateFraction",
            CetError::TooFewSamples { .. } => "TooFewSamples",
            CetError::BadClassId(_) => "BadClassId",
            CetError::NonFinite(_) => "NonFinite",
            CetError::PreprocessMismatch { .. } => "PreprocessMismatch",
            CetError::LengthMismatch(_) => "LengthMismatch",
            CetError::SingleClass => "SingleClass",
            CetError::VersionMismatch { .. } => "VersionMismatch",
            CetError::CorruptArtifact(_) => "CorruptArtifact",
            CetError::MissingInput(_) => "MissingInput",
            CetError::Config(_) => "Config",
            CetError::Io(_) => "Io",
            CetError::Csv(_) => "Csv",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CetError::Config(_) | CetError::DegenerateFraction(_) | CetError::TooFewSamples { .. } => 2,
            CetError::NonFinite(_) => 4,
            _ => 3,
        }
    }
}
