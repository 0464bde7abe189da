//! Synthetic transition generation by alpha compositing.

pub mod alpha;
pub mod bootstrap;
pub mod dataset;
pub mod procedural;
pub mod wipe;

pub use alpha::{
    composite, composite_segment, make_dissolve_schedule, make_sharp_schedule, Alpha, AlphaSchedule, Fade,
    ScheduleDescriptor, ScheduleKind,
};
pub use bootstrap::{export_bootstrap_candidates, import_bootstrap_labels, BootstrapPackage, CandidateItem};
pub use dataset::{clean_spans, synthesize_dataset, AnnotatedSource, CleanSpan, SynthSpec, Synthesizer};
pub use wipe::{render_wipe_schedule, wipe_catalog, WipeFamily, WipeMatte, WipeParams};
