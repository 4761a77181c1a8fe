use crate::linalg::LinalgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("layer {layer}: {detail}")]
    LayerShape { layer: usize, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a matching forward")]
    StaleCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("duplicate index {0} in active set")]
    DuplicateIndex(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("zero-variance trace; correlation undefined")]
    ZeroVariance,
    #[error("data file: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
