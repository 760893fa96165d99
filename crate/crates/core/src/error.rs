use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("{tokens} tokens cannot be laid out on a {height}x{width} grid")]
    Grid { tokens: usize, height: usize, width: usize },
    #[error("{op} requires a token grid but none was provided")]
    MissingGrid { op: &'static str },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("cannot split {tokens} tokens into {parts} mini-batches")]
    Partition { parts: usize, tokens: usize },
    #[error("inner update diverged at epoch {epoch}, mini-batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("linear attention denominator {value:e} below threshold")]
    Normalization { value: f64 },
    #[error("contract violated: {0}")]
    Contract(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("oracle failure: {0}")]
    Oracle(&'static str),
}
