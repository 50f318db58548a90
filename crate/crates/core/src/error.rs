use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading, preparing, decoding or scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sentence {sent_id}: {msg}")]
    InvalidTree { sent_id: String, msg: String },

    #[error("duplicate sent_id {0}")]
    DuplicateSentId(String),

    #[error("record {sent_id}: subword index {index}: {msg}")]
    Coverage {
        sent_id: String,
        index: usize,
        msg: String,
    },

    #[error("record {sent_id}: {msg}")]
    InvalidRecord { sent_id: String, msg: String },

    #[error("archive format error: {0}")]
    Format(String),

    #[error("unsupported archive version {0} (expected 1)")]
    UnsupportedVersion(u32),

    #[error("truncated archive: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid token spans: {0}")]
    InvalidSpans(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot decode an empty matrix")]
    EmptyMatrix,

    #[error("non-finite weight at ({0}, {1})")]
    NonFinite(usize, usize),

    #[error("sentence {sent_id}: decoded tree has {pred} nodes, gold sentence has {gold} tokens")]
    LengthMismatch {
        sent_id: String,
        pred: usize,
        gold: usize,
    },

    #[error("nothing to aggregate")]
    EmptyAggregate,

    #[error("empty treebank")]
    EmptyTreebank,

    #[error("archive and treebank are not aligned: {}", describe_misalignment(.missing, .extra))]
    Misaligned {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("malformed report {path}: {msg}")]
    Report { path: PathBuf, msg: String },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn describe_misalignment(missing: &[String], extra: &[String]) -> String {
    fn first5(ids: &[String]) -> String {
        let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        if ids.len() > 5 {
            s.push_str(&format!(", ... ({} total)", ids.len()));
        }
        s
    }

    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing from archive: {}", first5(missing)));
    }
    if !extra.is_empty() {
        parts.push(format!("not in treebank: {}", first5(extra)));
    }
    parts.join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
