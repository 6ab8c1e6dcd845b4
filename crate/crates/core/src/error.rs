use thiserror::Error;

/// Errors raised by tensor kernels, the solver and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry at flat index {index}")]
    NonFiniteEntry { index: usize },

    #[error("invalid mode {mode} for tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("column count mismatch: {left} vs {right}")]
    ColsMismatch { left: usize, right: usize },

    #[error("size mismatch: cannot reshape {from} elements into {to}")]
    SizeMismatch { from: usize, to: usize },

    #[error("SVD did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("tensor is identically zero")]
    ZeroTensor,

    #[error("invalid tensor order {0}")]
    InvalidOrder(usize),

    #[error("rank exceeds mode extent: R = {rank} but mode {mode} has extent {extent}")]
    RankTooLarge {
        rank: usize,
        mode: usize,
        extent: usize,
    },

    #[error("initializer is degenerate: all weights vanish")]
    DegenerateInitializer,

    #[error("weights vanish: sigma is the zero vector")]
    DegenerateSigma,

    #[error("initial factor set is infeasible: {0}")]
    InfeasibleInit(String),

    #[error("kruskal rank supports at most {max} columns, got {cols}")]
    TooManyColumns { cols: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
