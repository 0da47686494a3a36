use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("station {s} is outside the reference line [0, {len}]")]
    OutOfRange { s: f64, len: f64 },
    #[error("no free space at the ego start position (s={s}, l={l})")]
    NoFreeSpace { s: f64, l: f64 },
    #[error("no decisions available")]
    EmptyDecisionSet,
    #[error("degenerate decision: {0}")]
    DegenerateDecision(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("qp is not convex: {0}")]
    NotConvex(String),
    #[error("path corridor is infeasible")]
    InfeasibleCorridor,
    #[error("speed constraints are infeasible for the current obstacle decisions")]
    InfeasibleDecisionSet,
    #[error("continuity violated at joint {joint}: residual {residual:e}")]
    ContinuityViolation { joint: usize, residual: f64 },
    #[error("planning failed: {0}")]
    PlanningFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
