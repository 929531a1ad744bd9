use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite or otherwise out-of-domain input.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid parameters; `field` names the offending setting.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("linear-domain overflow (max log-entry {max_log:.3}, row spread {spread:.3}); use the log-domain assembly path")]
    LinearOverflow { max_log: f64, spread: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("stationary weight {value:e} at index {index} underflows; epsilon is too small for this grid")]
    Underflow { index: usize, value: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("insufficient data: {usable} usable points, {required} required")]
    InsufficientData { usable: usize, required: usize },

    #[error("kernel is reducible: {0}")]
    Reducible(String),

    /// Broken invariant that correct inputs cannot trigger.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
