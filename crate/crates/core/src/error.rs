//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Error`]. The CLI maps errors to process
//! exit codes via [`Error::exit_code`]: configuration and usage problems exit
//! with 1, data problems (unreadable files, malformed corpora, corrupt
//! checkpoints) exit with 2.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor primitive was called with incompatible operand shapes.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An index passed to a tensor primitive is outside the valid range.
    #[error("index {index} out of range in `{op}` (len {len})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    /// `backward` was called on a tensor that is not a single scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// An encoder or decoder was handed an empty token sequence.
    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    /// An attention mask excluded every position.
    #[error("attention mask excludes all positions")]
    AllMasked,

    /// A corpus file line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A configuration file or override was invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be read or written.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A checkpoint file failed validation.
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    /// A variant that selects facts against the reference response was
    /// invoked without explicitly opting in.
    #[error("variant {variant} selects facts using the reference response; pass --oracle to confirm")]
    OracleRequired { variant: String },

    /// Two paired sequences had different lengths.
    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    /// A gradient became non-finite during training.
    #[error("non-finite gradient in parameter `{param}`")]
    NanGradient { param: String },

    /// An operation that needs at least one example was given none.
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}

impl Error {
    /// Process exit code for the CLI: 1 for usage/config errors, 2 for data
    /// errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::Corrupt(_)
            | Error::EmptyDataset(_) => 2,
            _ => 1,
        }
    }

    /// Shorthand for wrapping an I/O error with the offending path.
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
