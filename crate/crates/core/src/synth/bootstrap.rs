//! Candidate packages for curating detector output into extra training data.
//!
//! Export writes every segment inside a gradual detection as a PNG stack and
//! a `labels.json` sidecar whose items all start as `"unlabeled"`. After the
//! sidecar has been edited by a reviewer, import turns the labeled items into
//! a dataset manifest over the same clip directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::frames::FrameSource;
use crate::manifest::{write_png_stack, DatasetManifest, ManifestEntry, Payload, PayloadFormat, Provenance};
use crate::synth::alpha::ScheduleDescriptor;
use crate::types::{TransitionEvent, TransitionLabel, SEGMENT_LEN, SEGMENT_STRIDE};
use crate::window::{segment_at, IngestPolicy};

pub const BOOTSTRAP_SCHEMA: &str = "sbd-bootstrap/1";
pub const UNLABELED: &str = "unlabeled";
pub const LABELS_FILE: &str = "labels.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub id: u64,
    /// PNG stack directory relative to the package root.
    pub clip: String,
    pub source: String,
    pub start_frame: usize,
    pub detected: TransitionLabel,
    pub score: f64,
    /// Reviewer decision: `no_transition`, `gradual`, `sharp` or `unlabeled`.
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPackage {
    pub schema: String,
    pub items: Vec<CandidateItem>,
}

impl BootstrapPackage {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(LABELS_FILE);
        let pkg: BootstrapPackage = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?;
        if pkg.schema != BOOTSTRAP_SCHEMA {
            return Err(Error::Manifest(format!("unsupported package schema `{}`", pkg.schema)));
        }
        Ok(pkg)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(LABELS_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").at(&path)
    }
}

/// Segment starts covered by a detection: aligned starts whose window lies
/// inside the event, or the aligned window holding its first frame.
fn candidate_starts(event: &TransitionEvent, frame_count: usize) -> Vec<usize> {
    let first = event.start_frame.div_ceil(SEGMENT_STRIDE) * SEGMENT_STRIDE;
    let starts: Vec<usize> = (first..frame_count)
        .step_by(SEGMENT_STRIDE)
        .take_while(|s| s + SEGMENT_LEN - 1 <= event.end_frame)
        .collect();
    if starts.is_empty() {
        vec![event.start_frame / SEGMENT_STRIDE * SEGMENT_STRIDE]
    } else {
        starts
    }
}

/// Writes a review package for the gradual detections of each source.
pub fn export_bootstrap_candidates(
    inputs: &[(&dyn FrameSource, &[TransitionEvent])],
    out_dir: &Path,
    policy: IngestPolicy,
) -> Result<BootstrapPackage> {
    fs::create_dir_all(out_dir.join("clips")).at(out_dir)?;
    let mut items = Vec::new();
    for (source, detections) in inputs {
        for event in detections.iter().filter(|e| e.label == TransitionLabel::Gradual) {
            for start in candidate_starts(event, source.frame_count()) {
                let id = items.len() as u64;
                let clip = format!("clips/{id:06}");
                let seg = segment_at(*source, start, policy)?;
                write_png_stack(&out_dir.join(&clip), &seg.frames)?;
                items.push(CandidateItem {
                    id,
                    clip,
                    source: source.uri().to_string(),
                    start_frame: start,
                    detected: event.label,
                    score: event.score,
                    label: UNLABELED.to_string(),
                });
            }
        }
    }
    let pkg = BootstrapPackage {
        schema: BOOTSTRAP_SCHEMA.to_string(),
        items,
    };
    pkg.write(out_dir)?;
    Ok(pkg)
}

/// Builds a manifest from the reviewed items of a package and writes it to
/// `manifest.jsonl` in the package root. Unlabeled items are skipped.
pub fn import_bootstrap_labels(package_dir: &Path) -> Result<DatasetManifest> {
    let pkg = BootstrapPackage::read(package_dir)?;
    let mut entries = Vec::new();
    for item in &pkg.items {
        if item.label == UNLABELED {
            continue;
        }
        let label: TransitionLabel = item.label.parse()?;
        if label == TransitionLabel::Wipe {
            return Err(Error::Label(format!("{} (item {}: reviewed labels are none, gradual or sharp)", item.label, item.id)));
        }
        entries.push(ManifestEntry {
            segment_id: item.id,
            payload: Payload {
                format: PayloadFormat::PngStack,
                path: item.clip.clone(),
            },
            label,
            alpha: ScheduleDescriptor::none(),
            provenance: Provenance {
                sources: vec![item.source.clone()],
                starts: vec![item.start_frame],
                seed: 0,
                stream: item.id,
            },
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.write(&package_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::MemorySource;
    use crate::synth::procedural::still;

    #[test]
    fn starts_inside_event() {
        let e = TransitionEvent::new(TransitionLabel::Gradual, 8, 39, 0.9);
        assert_eq!(candidate_starts(&e, 100), vec![8, 16, 24]);
        let e = TransitionEvent::new(TransitionLabel::Gradual, 90, 99, 0.9);
        assert_eq!(candidate_starts(&e, 100), vec![88]);
    }

    #[test]
    fn export_then_import() {
        let dir = tempfile::tempdir().unwrap();
        let src = MemorySource::new("mem:a", still(40, 30, [10, 20, 30], 48)).unwrap();
        let none: &[TransitionEvent] = &[];
        let empty = export_bootstrap_candidates(&[(&src, none)], dir.path(), IngestPolicy::Resize).unwrap();
        assert!(empty.items.is_empty());

        let dets = [
            TransitionEvent::new(TransitionLabel::Gradual, 0, 23, 0.8),
            TransitionEvent::cut(30),
        ];
        let mut pkg = export_bootstrap_candidates(&[(&src, &dets)], dir.path(), IngestPolicy::Resize).unwrap();
        assert_eq!(pkg.items.len(), 2);
        assert!(pkg.items.iter().all(|i| i.label == UNLABELED));
        assert!(dir.path().join("clips/000001/15.png").exists());

        pkg.items[0].label = "gradual".into();
        pkg.write(dir.path()).unwrap();
        let m = import_bootstrap_labels(dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.count(TransitionLabel::Gradual), 1);
        let frames = DatasetManifest::load_frames(&m.entries[0], dir.path()).unwrap();
        assert_eq!(frames[[0, 0, 0, 2]], 30);

        pkg.items[1].label = "wipe".into();
        pkg.write(dir.path()).unwrap();
        assert!(import_bootstrap_labels(dir.path()).is_err());
    }
}
