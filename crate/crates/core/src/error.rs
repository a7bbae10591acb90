use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training data contains no events; the base hazard log(0) is undefined")]
    NoEvents,

    #[error("Newton iterations did not converge after {iterations} steps (gradient max-norm {grad_norm:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        beta: Vec<f64>,
    },

    #[error("coefficient for `{feature}` diverged (|beta| = {magnitude:.1} on the standardized scale); covariate appears to separate events")]
    Separation { feature: String, magnitude: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the content of input data or model files
    /// rather than by how the library was called.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
