use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The backend could not be reached (connect, timeout, broken pipe).
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    /// The backend answered, but the payload does not follow the wire schema.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The backend answered with a non-2xx status.
    #[error("server returned HTTP {status}: {body}")]
    Server { status: u16, body: String },

    /// Well-formed input whose content is inconsistent or incomplete.
    #[error("data error: {0}")]
    Data(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    /// A correlation statistic is undefined on the given input.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("refinement iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }

    /// True for failures that originate in a scoring backend rather than in
    /// local data or arguments.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Transport { .. } | Error::Protocol(_) | Error::Server { .. } => true,
            Error::Iteration { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
