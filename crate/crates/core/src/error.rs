use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("checkpoint format error{}: {message}", tensor.as_ref().map(|t| format!(" in tensor `{t}`")).unwrap_or_default())]
    Format {
        tensor: Option<String>,
        message: String,
    },

    #[error("unsupported for this model: {0}")]
    Mode(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::Numeric(_) => "numeric",
            Error::EmptyBatch(_) => "empty_batch",
            Error::EmptyInput(_) => "empty_input",
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::Mode(_) => "mode",
            Error::Divergence { .. } => "divergence",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn format(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            tensor: Some(tensor.into()),
            message: message.into(),
        }
    }

    pub(crate) fn format_msg(message: impl Into<String>) -> Self {
        Error::Format {
            tensor: None,
            message: message.into(),
        }
    }
}
