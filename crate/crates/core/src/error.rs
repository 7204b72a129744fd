use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ranges or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index {index} out of range (size {len})")]
    Index { index: usize, len: usize },

    #[error("sequence length {len} exceeds context length {context}")]
    Length { len: usize, context: usize },

    /// A scripted backend has no distribution for the requested step or prefix.
    #[error("script exhausted at step {step}")]
    ScriptExhausted { step: usize },

    #[error("backend failure at step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("structural error: {0}")]
    Structural(String),

    /// A metric or analysis that cannot be computed on the given input.
    #[error("report error: {0}")]
    Report(String),

    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad input or configuration, as opposed to
    /// failures raised while a backend or numeric kernel was running.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Index { .. }
            | Error::Structural(_)
            | Error::Report(_)
            | Error::DegenerateCorrelation(_)
            | Error::Io(_)
            | Error::Json(_) => true,
            Error::Numeric(_)
            | Error::Length { .. }
            | Error::ScriptExhausted { .. }
            | Error::Backend { .. } => false,
        }
    }
}
