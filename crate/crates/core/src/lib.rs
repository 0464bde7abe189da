//! Shot boundary detection with a spatio-temporal 3D CNN trained on
//! synthetic composited transitions.

pub mod classifier;
pub mod desk;
pub mod error;
pub mod eval;
pub mod frames;
pub mod manifest;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod types;
pub mod window;

pub use error::{Error, Result};
pub use frames::{open_frame_source, Fps, Frame, FrameSource, ImageDirSource, MemorySource, Y4mSource};
pub use manifest::{DatasetManifest, ManifestEntry, PayloadFormat};
pub use types::{EventDocument, SegmentSample, TransitionEvent, TransitionLabel, FRAME_SIDE, SEGMENT_LEN, SEGMENT_STRIDE};
pub use window::{window_video, IngestPolicy};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/segments.md")]
    mod segments {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/throughput.md")]
    mod throughput {}
    #[doc = include_str!("../../../book/src/desk.md")]
    mod desk {}
}
