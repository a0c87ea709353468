use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error("steady-state excited population is zero; the correlation function is undefined")]
    UndefinedCorrelation,

    #[error("atom is not driven (rabi = 0); it never emits")]
    NoEmission,

    #[error("normalization undefined: {0}")]
    UndefinedNormalization(&'static str),

    #[error("delay grids differ: {0}")]
    GridMismatch(String),

    #[error("time tags not sorted at index {index}")]
    Unsorted { index: usize },

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: malformed time-tag file at byte {offset}: {reason}")]
    TagFile { path: PathBuf, offset: u64, reason: String },

    #[error("{path}: malformed CSV at line {line}: {reason}")]
    Csv { path: PathBuf, line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fast correlator disagrees with the brute-force count in bin {bin}: {fast} vs {brute}")]
    OracleMismatch { bin: usize, fast: u64, brute: u64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Process exit code for this error: 1 validation, 2 I/O, 3 oracle
    /// mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::TagFile { .. } | Error::Csv { .. } => 2,
            Error::OracleMismatch { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
