use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants split into two families that the CLI maps onto distinct exit
/// codes: validation problems (bad input, shapes, files) and numerical
/// failures (divergence, non-finite values, failed gradient checks).
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion {index} has zero norm")]
    DegenerateRotation { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty mask: loss needs at least one foreground pixel")]
    EmptyMask,

    #[error("no foreground points")]
    NoForegroundPoints,

    #[error("too few points for k-nearest-neighbour graph: {points} points, k = {k}")]
    TooFewPoints { points: usize, k: usize },

    #[error("degenerate torso: reference joints coincide")]
    DegenerateTorso,

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("{format} parse error at byte offset {offset}: {message}")]
    Parse {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged(_) | Error::GradCheck(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
