use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: String, right: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("correlation undefined: {0}")]
    Undefined(String),

    #[error("training diverged at epoch {epoch}, sentence {sentence}: loss = {loss}")]
    Divergence {
        epoch: usize,
        sentence: usize,
        loss: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
