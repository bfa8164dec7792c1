use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or grid dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// The caller asked for something the operation does not accept.
    #[error("usage error: {0}")]
    Usage(String),
    /// A configuration value is out of range or inconsistent.
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    /// The input carries no information the operation can work with.
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
