use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("grid domains do not match: {0}")]
    DomainMismatch(String),

    #[error("operation undefined on the empty set")]
    EmptySet,

    #[error("operation undefined on the full grid")]
    FullSet,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("malformed mask file: {0}")]
    MaskFormat(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in scalar field")]
    NonFinite,

    #[error("inner solver did not converge: gap {gap:.3e} > tol {tol:.3e} after {iters} iterations")]
    Convergence { gap: f64, tol: f64, iters: usize },

    #[error("multiplier bracket expansion exceeded {0} doublings (degenerate input)")]
    BracketExpansion(usize),

    #[error("set touched the {margin}-cell margin of the computational box at step {step}")]
    Containment { step: usize, margin: usize },

    #[error("grid too large for exhaustive enumeration: {cells} cells > {max}")]
    OracleTooLarge { cells: usize, max: usize },

    #[error("degenerate target cell count {target} for {cells} cells")]
    OracleDegenerateTarget { target: usize, cells: usize },

    #[error("too few snapshots for this diagnostic (need {need}, have {have})")]
    TooFewSnapshots { need: usize, have: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
