use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error in {op}: element {index} = {value} (expected {expected})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
        expected: &'static str,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("batch composition error: {0}")]
    BatchComposition(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite loss at iteration {iteration} (last finite iteration: {last_good:?})")]
    NonFinite {
        iteration: usize,
        last_good: Option<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
