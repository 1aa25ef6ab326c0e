use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<Error> },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] strn_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches the file an error came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile { path: path.into(), source: Box::new(e) },
        }
    }

    /// Process exit code: 2 argument error, 3 I/O error, 4 validation error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Usage(_) | Error::Core(strn_core::Error::InvalidArgument(_)) => 2,
            Error::InFile { source, .. } => match source.exit_code() {
                2 => 4,
                c => c,
            },
            Error::Parse { .. } | Error::MissingKey(_) | Error::Core(_) => 4,
        }
    }
}
