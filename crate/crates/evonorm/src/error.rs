use thiserror::Error;

/// Errors surfaced by tensor arithmetic, graph evaluation and search plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize, usize, usize),
        rhs: (usize, usize, usize, usize),
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength {
        shape: (usize, usize, usize, usize),
        len: usize,
    },
    #[error("{groups} groups do not divide {channels} channels")]
    GroupDivisibility { groups: usize, channels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("direction vector has zero norm")]
    ZeroVector,
    #[error("arity mismatch: {op} expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid layer graph: {0}")]
    InvalidGraph(String),
    #[error("unknown zoo layer `{name}`; valid names: {valid}")]
    UnknownZoo { name: String, valid: String },
    #[error("graph parse error: {0}")]
    Parse(String),
    #[error("selection from an empty population")]
    EmptyPopulation,
    #[error("score vectors must share one length: saw {a} and {b}")]
    ScoreLength { a: usize, b: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
