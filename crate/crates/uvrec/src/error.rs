use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] uvrec_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// A file exists but its contents do not parse.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("png encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Format { .. } => "E_FORMAT",
            Error::Config { .. } | Error::Core(uvrec_core::Error::Config { .. }) => "E_CONFIG",
            Error::Core(uvrec_core::Error::Shape(_)) => "E_SHAPE",
            Error::Core(uvrec_core::Error::Usage(_)) => "E_USAGE",
            Error::Core(uvrec_core::Error::Degenerate(_)) => "E_DEGENERATE",
            Error::Image(_) => "E_IMAGE",
        }
    }

    /// Process exit status for this error class; clap's own usage errors
    /// exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "E_IO" => 3,
            "E_FORMAT" => 4,
            "E_CONFIG" => 5,
            "E_USAGE" => 6,
            "E_SHAPE" => 7,
            "E_DEGENERATE" => 8,
            _ => 9,
        }
    }

    /// `error[CODE]: message` on one line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.code())
    }
}

/// Attaches a path to IO failures.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
