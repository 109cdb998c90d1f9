use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row/column shape of a dense tensor. Vectors are `n x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn vector(len: usize) -> Self {
        Shape { rows: len, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("lookup index {index} out of range for `{table}` with {rows} rows")]
    IndexOutOfRange {
        table: String,
        index: usize,
        rows: usize,
    },

    #[error("loss node must be scalar, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("graph has already been differentiated")]
    GraphConsumed,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sentence {sentence}: {msg}")]
    Mismatch { sentence: usize, msg: String },

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("at least 10 sentences are needed for a 9:1 split, got {0}")]
    TooFewSentences(usize),

    #[error("pretrained vectors have dimension {found}, word embeddings have {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("sentence of length {0} is too long for exhaustive search (max 8)")]
    TooLongForBruteForce(usize),

    #[error("cannot decode an empty sentence")]
    EmptySentence,

    #[error("unknown punctuation convention `{0}`")]
    UnknownConvention(String),

    #[error("non-finite loss at epoch {epoch}, sentence {sentence}")]
    NonFiniteLoss { epoch: usize, sentence: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupted checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
