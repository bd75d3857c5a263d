use thiserror::Error;

/// Errors raised by the localization engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.3}, {y:.3}) lies outside the grid extents")]
    OutsideGrid { x: f64, y: f64 },

    #[error("class id {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Both semantic vectors are empty, so no similarity can be formed.
    #[error("insufficient semantics: both observations are empty")]
    InsufficientSemantics,

    #[error("occupancy grid has no free cells")]
    NoFreeSpace,

    #[error("map mismatch: {0}")]
    MapMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
