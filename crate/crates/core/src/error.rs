use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis { op: &'static str, axis: usize, rank: usize },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("target class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("mention span ({start}, {end}) is invalid for text of {len} chars")]
    InvalidSpan { start: usize, end: usize, len: usize },

    #[error("mention span ({start}, {end}) crosses the truncation boundary at length {max_len}")]
    Truncation { start: usize, end: usize, max_len: usize },

    #[error("entity vocabulary of {vocab} rows is too small for {positives} positives and {count} negatives")]
    VocabTooSmall { vocab: usize, positives: usize, count: usize },

    #[error("unknown entity id {0:?}")]
    UnknownEntity(String),

    #[error("description cache miss for entity {0:?}")]
    CacheMiss(String),

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Dataset { path: String, line: usize, msg: String },

    #[error("label {0:?} does not occur in the training split")]
    UnknownLabel(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite gradient in parameter {name} at element {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
