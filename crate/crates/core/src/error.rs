use thiserror::Error;

/// Errors raised by library operations.
///
/// Contract violations carry a human-readable message naming the offending
/// entity; data-quality issues in scenes are reported separately through
/// [`crate::scene::Violation`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),

    #[error("invalid traffic element: {0}")]
    InvalidTrafficElement(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("junction mismatch between lane {from} and lane {to}: gap {gap:.6} m")]
    JunctionMismatch { from: usize, to: usize, gap: f64 },

    #[error("no connection queries")]
    NoConnectionQueries,

    #[error("empty lane list")]
    EmptyLanes,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
