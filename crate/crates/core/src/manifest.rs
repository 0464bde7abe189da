//! Dataset manifests (`sbd-manifest/1` JSON lines) and segment payload files.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use image::RgbImage;
use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::synth::ScheduleDescriptor;
use crate::types::{TransitionLabel, FRAME_SIDE, SEGMENT_LEN};

pub const MANIFEST_SCHEMA: &str = "sbd-manifest/1";
const PACKED_MAGIC: &[u8; 4] = b"SBDT";
const PACKED_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadFormat {
    /// One uncompressed `(16, 112, 112, 3)` tensor file.
    #[default]
    Packed,
    /// A directory holding `00.png` .. `15.png`.
    PngStack,
}

/// Locator of a segment's frames, relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub format: PayloadFormat,
    pub path: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub starts: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub segment_id: u64,
    pub payload: Payload,
    pub label: TransitionLabel,
    pub alpha: ScheduleDescriptor,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    counts: BTreeMap<TransitionLabel, usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub counts: BTreeMap<TransitionLabel, usize>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for e in &entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        let manifest = Self { entries, counts };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: TransitionLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut counts: BTreeMap<TransitionLabel, usize> = BTreeMap::new();
        for e in &self.entries {
            if !seen.insert(e.segment_id) {
                return Err(Error::Manifest(format!("duplicate segment_id {}", e.segment_id)));
            }
            *counts.entry(e.label).or_insert(0) += 1;
        }
        let declared: BTreeMap<_, _> = self.counts.iter().filter(|(_, &n)| n > 0).map(|(k, v)| (*k, *v)).collect();
        if declared != counts {
            return Err(Error::Manifest(format!(
                "declared counts {declared:?} differ from entries {counts:?}"
            )));
        }
        Ok(())
    }

    /// Serializes to JSON lines: a schema header followed by one entry per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            schema: MANIFEST_SCHEMA.to_string(),
            counts: self.counts.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(line)?,
            None => return Err(Error::Manifest("missing header line".into())),
        };
        if header.schema != MANIFEST_SCHEMA {
            return Err(Error::Manifest(format!("unsupported schema `{}`", header.schema)));
        }
        let entries = lines
            .map(serde_json::from_str)
            .collect::<Result<Vec<ManifestEntry>, _>>()?;
        let manifest = Self {
            entries,
            counts: header.counts,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&fs::read_to_string(path).at(path)?)
    }

    /// Loads an entry's frames; `base` is the directory holding the manifest.
    pub fn load_frames(entry: &ManifestEntry, base: &Path) -> Result<Array4<u8>> {
        let path = base.join(&entry.payload.path);
        match entry.payload.format {
            PayloadFormat::Packed => read_packed(&path),
            PayloadFormat::PngStack => read_png_stack(&path),
        }
    }
}

fn check_segment_shape(frames: &Array4<u8>) -> Result<()> {
    if frames.dim() != (SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3) {
        return Err(Error::Shape(format!(
            "segment payload must be (16, 112, 112, 3), got {:?}",
            frames.dim()
        )));
    }
    Ok(())
}

/// Packed tensor: `SBDT`, version byte, four little-endian u32 dims, raw bytes.
pub fn write_packed(path: &Path, frames: &Array4<u8>) -> Result<()> {
    check_segment_shape(frames)?;
    let mut bytes = Vec::with_capacity(21 + frames.len());
    bytes.extend_from_slice(PACKED_MAGIC);
    bytes.push(PACKED_VERSION);
    for d in frames.shape() {
        bytes.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    bytes.extend(frames.iter());
    fs::write(path, bytes).at(path)
}

pub fn read_packed(path: &Path) -> Result<Array4<u8>> {
    let bytes = fs::read(path).at(path)?;
    if bytes.len() < 21 || &bytes[..4] != PACKED_MAGIC || bytes[4] != PACKED_VERSION {
        return Err(Error::Manifest(format!("{} is not a packed segment", path.display())));
    }
    let dims: Vec<usize> = bytes[5..21]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let frames = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), bytes[21..].to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    check_segment_shape(&frames)?;
    Ok(frames)
}

pub fn write_png_stack(dir: &Path, frames: &Array4<u8>) -> Result<()> {
    check_segment_shape(frames)?;
    fs::create_dir_all(dir).at(dir)?;
    for (t, frame) in frames.axis_iter(Axis(0)).enumerate() {
        let raw: Vec<u8> = frame.iter().copied().collect();
        let img = RgbImage::from_raw(FRAME_SIDE as u32, FRAME_SIDE as u32, raw).expect("frame size");
        img.save(dir.join(format!("{t:02}.png")))?;
    }
    Ok(())
}

pub fn read_png_stack(dir: &Path) -> Result<Array4<u8>> {
    let mut frames = Array4::<u8>::zeros((SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3));
    for t in 0..SEGMENT_LEN {
        let img = image::open(dir.join(format!("{t:02}.png")))?.to_rgb8();
        if img.dimensions() != (FRAME_SIDE as u32, FRAME_SIDE as u32) {
            return Err(Error::Shape(format!("{}: frame {t} is not 112x112", dir.display())));
        }
        let view = crate::window::frame_view(&img);
        frames.index_axis_mut(Axis(0), t).assign(&view);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: u64, label: TransitionLabel) -> ManifestEntry {
        ManifestEntry {
            segment_id: id,
            payload: Payload {
                format: PayloadFormat::Packed,
                path: format!("segments/{id:06}.sbdt"),
            },
            label,
            alpha: ScheduleDescriptor::none(),
            provenance: Provenance {
                sources: vec!["a".into()],
                starts: vec![id as usize],
                seed: 7,
                stream: id,
            },
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = DatasetManifest::new(vec![
            entry(1, TransitionLabel::Sharp),
            entry(1, TransitionLabel::Gradual),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Manifest(_)));
    }

    #[test]
    fn header_counts_must_match() {
        let m = DatasetManifest::new(vec![entry(0, TransitionLabel::Sharp)]).unwrap();
        let text = m.to_jsonl().unwrap().replace("\"sharp\":1", "\"sharp\":2");
        assert!(DatasetManifest::parse_jsonl(&text).is_err());
        let bad_schema = m.to_jsonl().unwrap().replace(MANIFEST_SCHEMA, "sbd-manifest/9");
        assert!(DatasetManifest::parse_jsonl(&bad_schema).is_err());
    }

    #[test]
    fn payload_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = Array4::from_shape_fn((16, 112, 112, 3), |(t, y, x, c)| (t * 3 + y + x * 2 + c) as u8);
        write_packed(&dir.path().join("a.sbdt"), &frames).unwrap();
        assert_eq!(read_packed(&dir.path().join("a.sbdt")).unwrap(), frames);
        write_png_stack(&dir.path().join("b"), &frames).unwrap();
        assert_eq!(read_png_stack(&dir.path().join("b")).unwrap(), frames);
        assert!(write_packed(&dir.path().join("c"), &Array4::zeros((15, 112, 112, 3))).is_err());
    }

    fn arb_label() -> impl Strategy<Value = TransitionLabel> {
        prop::sample::select(TransitionLabel::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn manifest_round_trips(labels in prop::collection::vec(arb_label(), 0..40)) {
            let entries = labels.iter().enumerate().map(|(i, &l)| entry(i as u64 * 3, l)).collect();
            let m = DatasetManifest::new(entries).unwrap();
            let parsed = DatasetManifest::parse_jsonl(&m.to_jsonl().unwrap()).unwrap();
            prop_assert_eq!(parsed, m);
        }
    }
}
