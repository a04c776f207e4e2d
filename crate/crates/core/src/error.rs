use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("split ratios must be non-negative and sum to 1 (got {train}, {val}, {test})")]
    InvalidRatios { train: f64, val: f64, test: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("y_true has {true_len} labels but y_pred has {pred_len}")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid training log: {0}")]
    InvalidLog(String),
}
