use std::path::PathBuf;

use thiserror::Error;

use crate::iqsim::Label;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config file {path}: {msg}")]
    ConfigFile { path: PathBuf, msg: String },

    #[error("{what} = {value} is outside the representable range [{lo}, {hi}]")]
    Range {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no shots with label {0}")]
    MissingClass(Label),

    #[error("mean trajectories are identical; weight vector is undefined")]
    DegenerateWeights,

    #[error("covariance matrix is singular (condition estimate {cond:e})")]
    Singular { cond: f64 },

    #[error("channel {channel} has zero spread")]
    ZeroSpread { channel: &'static str },

    #[error("not enough shots: need at least {need}, got {got}")]
    TooFewShots { need: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("parse error at line {line} (byte offset {offset}): {msg}")]
    Parse {
        line: usize,
        offset: usize,
        msg: String,
    },

    #[error("checksum mismatch for qubit {qubit} entry spanning byte offsets {start}..{end}")]
    Checksum {
        qubit: u8,
        start: usize,
        end: usize,
    },

    #[error("duplicate qubit id {0} in bank")]
    DuplicateQubit(u8),

    #[error("qubit id {0} not present in bank")]
    MissingQubit(u8),

    #[error("bank holds {0} models; at most 8 are supported")]
    BankFull(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(what: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Error::Range {
            what: what.into(),
            value,
            lo,
            hi,
        }
    }

    /// True for errors caused by bad invocation or unreadable configuration,
    /// as opposed to errors raised by the data itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigFile { .. } | Error::Io { .. }
        )
    }
}
