use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, index, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Source and observation point coincide (or nearly so).
    #[error("kernel singularity: separation {distance:e} m is below 1e-12 m")]
    Singularity { distance: f64 },

    #[error("invalid scene: source {source_index}: {reason}")]
    Scene { source_index: usize, reason: String },

    /// The dense allocation would exceed the configured memory cap.
    #[error("capacity exceeded: {what} needs {required} bytes but the cap is {cap} bytes; use the compressed assembly instead")]
    Capacity {
        what: &'static str,
        required: u64,
        cap: u64,
    },

    #[error("column {column}: {inner}")]
    Column { column: usize, inner: Box<Error> },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn in_column(self, column: usize) -> Self {
        Error::Column {
            column,
            inner: Box::new(self),
        }
    }

    /// Strips any column context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Column { inner, .. } => inner.root(),
            e => e,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Capacity { .. } => 3,
            Error::Numeric(_) | Error::Singularity { .. } => 4,
            _ => 2,
        }
    }
}
