use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infinite cost unsupported")]
    InfiniteCost,
    #[error("quantized value out of 64-bit range: {0}")]
    Overflow(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("x carries no mass (row {0})")]
    EmptyRow(usize),
    #[error("restricted problem infeasible")]
    Infeasible,
    #[error("dense problem has {arcs} arcs, cap is {cap}")]
    DenseCap { arcs: usize, cap: usize },
    #[error("pair inside N")]
    PairInsideN,
    #[error("short-cut construction failed: {0}")]
    Shortcut(String),
    #[error("iteration watchdog hit after {0} iterations")]
    Watchdog(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
