use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams {
        field: &'static str,
        reason: &'static str,
    },
    #[error("invalid interval: dt = {dt} s must be positive")]
    InvalidInterval { dt: f64 },
    #[error("unsupported branch: {0}")]
    UnsupportedBranch(&'static str),
    #[error("degenerate frame: calibration markers are collinear or coincident")]
    DegenerateFrame,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("degenerate swarm: need at least 2 robots, got {count}")]
    DegenerateSwarm { count: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}
