use thiserror::Error;

/// Errors produced anywhere in the supervision pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation tilts the vertical axis by {tilt:.3e} rad (tolerance {tolerance:.3e})")]
    WarpTilt { tilt: f64, tolerance: f64 },

    #[error("point at depth {depth:.6} m is in front of the near plane ({near} m)")]
    BehindCamera { depth: f64, near: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("frame {frame} is outside the trajectory (0..{len})")]
    FrameOutOfRange { frame: i64, len: usize },

    #[error("no valid (offset, view) supervision term")]
    NoObservation,

    #[error("non-finite loss at probe {0}")]
    NonFinite(String),

    #[error("loss diverged: {loss:.6e} exceeds 10x the initial {initial:.6e}")]
    Divergence { loss: f64, initial: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("unknown camera view {0:?}")]
    UnknownView(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
