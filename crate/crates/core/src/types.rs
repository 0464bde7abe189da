//! Labels, transition events and the annotation/detection document format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Number of frames in a segment.
pub const SEGMENT_LEN: usize = 16;
/// Distance between consecutive segment starts.
pub const SEGMENT_STRIDE: usize = 8;
/// Side length of the square frames fed to the network.
pub const FRAME_SIDE: usize = 112;

/// Per-segment / per-event transition class.
///
/// The declaration order is the class order used everywhere: network output
/// index, SVM class index, and the tie-break order on equal scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionLabel {
    NoTransition,
    Gradual,
    Sharp,
    Wipe,
}

impl TransitionLabel {
    pub const ALL: [TransitionLabel; 4] = [
        TransitionLabel::NoTransition,
        TransitionLabel::Gradual,
        TransitionLabel::Sharp,
        TransitionLabel::Wipe,
    ];

    /// Active classes for a 3- or 4-class model, in class-index order.
    pub fn classes(num_classes: usize) -> Result<&'static [TransitionLabel]> {
        match num_classes {
            3 => Ok(&Self::ALL[..3]),
            4 => Ok(&Self::ALL[..]),
            n => Err(Error::Config(format!("num_classes must be 3 or 4, got {n}"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionLabel::NoTransition => "no_transition",
            TransitionLabel::Gradual => "gradual",
            TransitionLabel::Sharp => "sharp",
            TransitionLabel::Wipe => "wipe",
        }
    }

    pub fn is_transition(self) -> bool {
        self != TransitionLabel::NoTransition
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransitionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_transition" | "none" => Ok(TransitionLabel::NoTransition),
            "gradual" => Ok(TransitionLabel::Gradual),
            "sharp" => Ok(TransitionLabel::Sharp),
            "wipe" => Ok(TransitionLabel::Wipe),
            other => Err(Error::Label(other.to_string())),
        }
    }
}

/// A typed transition over an inclusive, 0-based frame range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub label: TransitionLabel,
    pub start_frame: usize,
    pub end_frame: usize,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl TransitionEvent {
    pub fn new(label: TransitionLabel, start_frame: usize, end_frame: usize, score: f64) -> Self {
        Self {
            label,
            start_frame,
            end_frame,
            score,
        }
    }

    /// A sharp cut between frames `first_new - 1` and `first_new`.
    pub fn cut(first_new: usize) -> Self {
        assert!(first_new >= 1, "a cut needs a preceding frame");
        Self::new(TransitionLabel::Sharp, first_new - 1, first_new, 1.0)
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of frames shared by two inclusive ranges.
    pub fn overlap(&self, other: &TransitionEvent) -> usize {
        let lo = self.start_frame.max(other.start_frame);
        let hi = self.end_frame.min(other.end_frame);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label == TransitionLabel::NoTransition {
            return Err(Error::Shape("events cannot carry the no_transition label".into()));
        }
        if self.start_frame > self.end_frame {
            return Err(Error::Shape(format!(
                "event start {} after end {}",
                self.start_frame, self.end_frame
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Domain(self.score));
        }
        Ok(())
    }
}

/// Annotation or detection file: `{video_id, events: [...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventDocument {
    pub video_id: String,
    pub events: Vec<TransitionEvent>,
}

impl EventDocument {
    pub fn new(video_id: impl Into<String>, events: Vec<TransitionEvent>) -> Self {
        Self {
            video_id: video_id.into(),
            events,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let doc: EventDocument = serde_json::from_str(&text)?;
        for event in &doc.events {
            event.validate()?;
        }
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").at(path)
    }
}

/// Where a segment's frames came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentOrigin {
    pub sources: Vec<String>,
    pub starts: Vec<usize>,
    pub schedule: Option<String>,
}

/// A 16-frame, 112x112 RGB clip; the unit of training and inference.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSample {
    /// `(16, 112, 112, 3)` in frame, row, column, channel order.
    pub frames: Array4<u8>,
    pub label: Option<TransitionLabel>,
    pub origin: SegmentOrigin,
    /// First source frame covered by this segment.
    pub start_frame: usize,
    /// Trailing frames that repeat the last real frame.
    pub pad_count: usize,
}

impl SegmentSample {
    pub fn new(frames: Array4<u8>) -> Result<Self> {
        let dim = frames.dim();
        if dim != (SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3) {
            return Err(Error::Shape(format!(
                "segment must be (16, 112, 112, 3), got {dim:?}"
            )));
        }
        Ok(Self {
            frames,
            label: None,
            origin: SegmentOrigin::default(),
            start_frame: 0,
            pad_count: 0,
        })
    }

    /// Index of the last real (unpadded) source frame.
    pub fn last_real_frame(&self) -> usize {
        self.start_frame + SEGMENT_LEN - 1 - self.pad_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trips_through_json() {
        for label in TransitionLabel::ALL {
            let json = serde_json::to_string(&label).unwrap();
            assert_eq!(json, format!("\"{}\"", label.as_str()));
            let back: TransitionLabel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, label);
            assert_eq!(label.as_str().parse::<TransitionLabel>().unwrap(), label);
        }
    }

    #[test]
    fn class_sets() {
        assert_eq!(TransitionLabel::classes(3).unwrap().len(), 3);
        assert!(!TransitionLabel::classes(3).unwrap().contains(&TransitionLabel::Wipe));
        assert_eq!(TransitionLabel::classes(4).unwrap()[3], TransitionLabel::Wipe);
        assert!(TransitionLabel::classes(5).is_err());
    }

    #[test]
    fn overlap_is_inclusive() {
        let a = TransitionEvent::new(TransitionLabel::Gradual, 20, 25, 1.0);
        let b = TransitionEvent::new(TransitionLabel::Gradual, 10, 20, 1.0);
        assert_eq!(a.overlap(&b), 1);
        let c = TransitionEvent::new(TransitionLabel::Gradual, 26, 30, 1.0);
        assert_eq!(a.overlap(&c), 0);
    }

    #[test]
    fn event_validation() {
        assert!(TransitionEvent::cut(5).validate().is_ok());
        assert!(TransitionEvent::new(TransitionLabel::Sharp, 6, 5, 1.0).validate().is_err());
        assert!(TransitionEvent::new(TransitionLabel::NoTransition, 1, 5, 1.0)
            .validate()
            .is_err());
        assert!(TransitionEvent::new(TransitionLabel::Gradual, 1, 5, 1.5).validate().is_err());
    }

    #[test]
    fn document_parses_annotation_json() {
        let text = r#"{"video_id":"v1","events":[{"label":"sharp","start_frame":9,"end_frame":10,"score":1.0},
                      {"label":"gradual","start_frame":40,"end_frame":50}]}"#;
        let doc: EventDocument = serde_json::from_str(text).unwrap();
        assert_eq!(doc.events.len(), 2);
        assert_eq!(doc.events[1].score, 1.0);
    }
}
