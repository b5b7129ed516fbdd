use std::fmt;
use std::path::PathBuf;

/// Errors raised across the crate. `class()` yields a stable, machine-parsable tag.
#[derive(Debug)]
pub enum Error {
    Dimension(String),
    Config(String),
    Numeric(String),
    Metric(String),
    TooFewSamples { n: usize, min: usize },
    Diverged { epoch: usize, loss: f64 },
    Format { file: PathBuf, offset: u64, msg: String },
    Io { path: PathBuf, source: std::io::Error },
    Fold { fold: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension-error",
            Error::Config(_) => "config-error",
            Error::Numeric(_) => "numeric-error",
            Error::Metric(_) => "metric-error",
            Error::TooFewSamples { .. } => "too-few-samples",
            Error::Diverged { .. } => "diverged-run",
            Error::Format { .. } => "format-error",
            Error::Io { .. } => "io-error",
            Error::Fold { source, .. } => source.class(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { file: file.into(), offset, msg: msg.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
            Error::Metric(m) => write!(f, "metric undefined: {m}"),
            Error::TooFewSamples { n, min } => {
                write!(f, "too few samples: got {n}, need at least {min}")
            }
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss = {loss})")
            }
            Error::Format { file, offset, msg } => {
                write!(f, "{} at byte {offset}: {msg}", file.display())
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Fold { fold, source } => write!(f, "fold {fold}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Fold { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
