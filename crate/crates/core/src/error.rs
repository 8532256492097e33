use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid sparse structure: {0}")]
    InvalidSparse(String),

    #[error("singular value decomposition did not converge on a {rows}x{cols} matrix")]
    Factorization { rows: usize, cols: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("irreparable rank deficiency: {0}")]
    IrreparableRank(String),

    #[error("corrupted state: {0}")]
    CorruptedState(String),

    #[error("ingestion error at line {line}, column {column}: {message}")]
    Ingestion {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("all {runs} runs failed; first error: {first}")]
    AllRunsFailed { runs: usize, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }

    pub(crate) fn ingestion(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Ingestion {
            line,
            column,
            message: message.into(),
        }
    }
}
