use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open frame source {uri}: {reason}")]
    Open { uri: String, reason: String },

    #[error("frame source {0} contains no frames")]
    EmptySource(String),

    #[error("frame index {index} out of range for source with {count} frames")]
    FrameIndex { index: usize, count: usize },

    #[error("expected 3 colour channels, got {0}")]
    Channels(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("alpha value {0} outside [0, 1]")]
    AlphaDomain(f32),

    #[error("sharp boundary index {0} must lie in [1, 15]")]
    Boundary(usize),

    #[error("transition duration {0} must lie in [2, 16]")]
    Duration(usize),

    #[error("unknown wipe family `{0}`")]
    WipeFamily(String),

    #[error("not enough clean spans to synthesize `{label}` segments: {reason}")]
    Exhausted { label: String, reason: String },

    #[error("class `{0}` has no segments in the manifest")]
    Coverage(String),

    #[error("unknown feature layer `{0}`")]
    Layer(String),

    #[error("classifier needs at least two classes, got {0}")]
    Degenerate(usize),

    #[error("segment labelings are not ordered: {0}")]
    Ordering(String),

    #[error("events refer to different videos: `{0}` vs `{1}`")]
    VideoId(String, String),

    #[error("value {0} outside [0, 1]")]
    Domain(f64),

    #[error("unknown label `{0}`")]
    Label(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
