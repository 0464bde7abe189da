//! Balanced synthetic segment datasets built by compositing clean spans of
//! annotated source material.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::info;
use ndarray::{Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::frames::FrameSource;
use crate::manifest::{
    write_packed, write_png_stack, DatasetManifest, ManifestEntry, Payload, PayloadFormat, Provenance,
};
use crate::synth::alpha::{
    composite_segment, make_dissolve_schedule, make_sharp_schedule, Fade, ScheduleDescriptor,
};
use crate::synth::wipe::{render_wipe_schedule, wipe_catalog};
use crate::types::{SegmentOrigin, SegmentSample, TransitionEvent, TransitionLabel, FRAME_SIDE, SEGMENT_LEN};
use crate::window::{ingest, IngestPolicy};

/// A source together with its known transitions.
pub struct AnnotatedSource {
    pub source: Box<dyn FrameSource>,
    pub annotations: Vec<TransitionEvent>,
}

impl AnnotatedSource {
    pub fn new(source: Box<dyn FrameSource>, annotations: Vec<TransitionEvent>) -> Self {
        Self { source, annotations }
    }
}

fn default_min_offset() -> usize {
    32
}
fn default_min_duration() -> usize {
    2
}
fn default_max_duration() -> usize {
    SEGMENT_LEN
}
fn default_fade_fraction() -> f64 {
    0.2
}
fn default_wipe_mattes() -> usize {
    196
}

/// What to synthesize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub counts: BTreeMap<TransitionLabel, usize>,
    /// Minimum distance in frames between a sampled span and any annotated
    /// transition.
    #[serde(default = "default_min_offset")]
    pub min_offset: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub payload: PayloadFormat,
    #[serde(default)]
    pub ingest: IngestPolicy,
    /// Inclusive range of gradual and wipe durations.
    #[serde(default = "default_min_duration")]
    pub min_duration: usize,
    #[serde(default = "default_max_duration")]
    pub max_duration: usize,
    /// Fraction of gradual segments rendered as fades to or from black.
    #[serde(default = "default_fade_fraction")]
    pub fade_fraction: f64,
    /// Size of the wipe matte catalogue.
    #[serde(default = "default_wipe_mattes")]
    pub wipe_mattes: usize,
}

impl SynthSpec {
    pub fn new(counts: impl IntoIterator<Item = (TransitionLabel, usize)>, seed: u64) -> Self {
        Self {
            counts: counts.into_iter().collect(),
            min_offset: default_min_offset(),
            seed,
            payload: PayloadFormat::default(),
            ingest: IngestPolicy::default(),
            min_duration: default_min_duration(),
            max_duration: default_max_duration(),
            fade_fraction: default_fade_fraction(),
            wipe_mattes: default_wipe_mattes(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_duration < 2 || self.max_duration > SEGMENT_LEN || self.min_duration > self.max_duration {
            return Err(Error::Config(format!(
                "duration range [{}, {}] must lie within [2, 16]",
                self.min_duration, self.max_duration
            )));
        }
        if !(0.0..=1.0).contains(&self.fade_fraction) {
            return Err(Error::Config(format!("fade_fraction {} outside [0, 1]", self.fade_fraction)));
        }
        if self.counts.get(&TransitionLabel::Wipe).copied().unwrap_or(0) > 0 && self.wipe_mattes == 0 {
            return Err(Error::Config("wipe segments requested with an empty matte catalogue".into()));
        }
        Ok(())
    }
}

/// Range of valid 16-frame window starts inside one shot of one source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CleanSpan {
    pub source: usize,
    pub first_start: usize,
    pub last_start: usize,
}

impl CleanSpan {
    fn starts(&self) -> usize {
        self.last_start - self.first_start + 1
    }
}

/// Windows of a source that stay `min_offset` frames clear of every
/// annotated transition. Each returned span lies within a single shot.
pub fn clean_spans(source: usize, frame_count: usize, annotations: &[TransitionEvent], min_offset: usize) -> Vec<CleanSpan> {
    let mut blocked: Vec<(usize, usize)> = annotations
        .iter()
        .map(|e| (e.start_frame.saturating_sub(min_offset), e.end_frame + min_offset))
        .collect();
    blocked.sort_unstable();
    let mut spans = Vec::new();
    let mut free_from = 0usize;
    let mut push = |from: usize, to_exclusive: usize| {
        if to_exclusive >= from + SEGMENT_LEN {
            spans.push(CleanSpan {
                source,
                first_start: from,
                last_start: to_exclusive - SEGMENT_LEN,
            });
        }
    };
    for (lo, hi) in blocked {
        if lo > free_from {
            push(free_from, lo.min(frame_count));
        }
        free_from = free_from.max(hi + 1);
    }
    if frame_count > free_from {
        push(free_from, frame_count);
    }
    spans
}

fn pick_span<R: Rng>(spans: &[CleanSpan], exclude: Option<usize>, rng: &mut R) -> (usize, usize) {
    let total: usize = spans
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, s)| s.starts())
        .sum();
    let mut k = rng.random_range(0..total);
    for (i, s) in spans.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if k < s.starts() {
            return (i, s.first_start + k);
        }
        k -= s.starts();
    }
    unreachable!("weighted pick stays in range")
}

fn read_window(src: &dyn FrameSource, start: usize, policy: IngestPolicy, frames: std::ops::Range<usize>) -> Result<Array4<u8>> {
    let mut out = Array4::<u8>::zeros((SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3));
    for t in frames {
        let f = ingest(&src.frame(start + t)?, policy)?;
        out.index_axis_mut(Axis(0), t).assign(&f);
    }
    Ok(out)
}

/// Label of each segment id: ids are assigned in class order.
fn label_plan(counts: &BTreeMap<TransitionLabel, usize>) -> Vec<TransitionLabel> {
    counts
        .iter()
        .flat_map(|(&label, &n)| std::iter::repeat_n(label, n))
        .collect()
}

/// Generator state shared by all segments of one build.
pub struct Synthesizer<'a> {
    sources: &'a [AnnotatedSource],
    spec: &'a SynthSpec,
    spans: Vec<CleanSpan>,
    mattes: Vec<crate::synth::wipe::WipeMatte>,
}

impl<'a> Synthesizer<'a> {
    pub fn new(sources: &'a [AnnotatedSource], spec: &'a SynthSpec) -> Result<Self> {
        spec.validate()?;
        let spans: Vec<CleanSpan> = sources
            .iter()
            .enumerate()
            .flat_map(|(i, s)| clean_spans(i, s.source.frame_count(), &s.annotations, spec.min_offset))
            .collect();
        for (&label, &n) in &spec.counts {
            if n == 0 {
                continue;
            }
            let needed = if label.is_transition() { 2 } else { 1 };
            if spans.len() < needed {
                return Err(Error::Exhausted {
                    label: label.to_string(),
                    reason: format!(
                        "need {needed} distinct clean shots of >= {SEGMENT_LEN} frames at offset {}, found {}",
                        spec.min_offset,
                        spans.len()
                    ),
                });
            }
        }
        let mut catalogue_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        catalogue_rng.set_stream(u64::MAX);
        let mattes = wipe_catalog(spec.wipe_mattes, &mut catalogue_rng);
        Ok(Self {
            sources,
            spec,
            spans,
            mattes,
        })
    }

    pub fn spans(&self) -> &[CleanSpan] {
        &self.spans
    }

    /// Deterministically builds segment `id` with the given label.
    pub fn segment(&self, id: u64, label: TransitionLabel) -> Result<SegmentSample> {
        self.build(id, label).map(|(s, _)| s)
    }

    /// Builds segment `id` and returns it with its schedule descriptor.
    pub fn build(&self, id: u64, label: TransitionLabel) -> Result<(SegmentSample, ScheduleDescriptor)> {
        let spec = self.spec;
        let policy = spec.ingest;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(id);
        let (b_span, b_start) = pick_span(&self.spans, None, &mut rng);
        let b_src = &*self.sources[self.spans[b_span].source].source;
        let mut origin = SegmentOrigin {
            sources: vec![b_src.uri().to_string()],
            starts: vec![b_start],
            schedule: None,
        };
        let sample = |frames, origin| SegmentSample {
            frames,
            label: Some(label),
            origin,
            start_frame: b_start,
            pad_count: 0,
        };
        if label == TransitionLabel::NoTransition {
            let frames = read_window(b_src, b_start, policy, 0..SEGMENT_LEN)?;
            let descriptor = ScheduleDescriptor::none();
            origin.schedule = Some(descriptor.id());
            return Ok((sample(frames, origin), descriptor));
        }
        let (f_span, f_start) = pick_span(&self.spans, Some(b_span), &mut rng);
        let f_src = &*self.sources[self.spans[f_span].source].source;
        let n = rng.random_range(spec.min_duration..=spec.max_duration);
        let mut schedule = match label {
            TransitionLabel::Sharp => make_sharp_schedule(rng.random_range(1..SEGMENT_LEN))?,
            TransitionLabel::Gradual => make_dissolve_schedule(n, &mut rng)?,
            TransitionLabel::Wipe => {
                let matte = self.mattes[rng.random_range(0..self.mattes.len())];
                render_wipe_schedule(&matte, n, &mut rng)?
            }
            TransitionLabel::NoTransition => unreachable!(),
        };
        let fade = (label == TransitionLabel::Gradual && rng.random_bool(spec.fade_fraction))
            .then(|| if rng.random_bool(0.5) { Fade::In } else { Fade::Out });
        schedule.descriptor.fade = fade;
        // Frames with alpha exactly 0 never read B, and frames with alpha
        // exactly 1 never read F.
        let offset = schedule.descriptor.offset;
        let b_end = (offset + schedule.duration).min(SEGMENT_LEN);
        let black = || Array4::zeros((SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3));
        let b = match fade {
            Some(Fade::In) => black(),
            _ => read_window(b_src, b_start, policy, 0..b_end)?,
        };
        let f = match fade {
            Some(Fade::Out) => black(),
            _ => read_window(f_src, f_start, policy, offset..SEGMENT_LEN)?,
        };
        let frames = composite_segment(&b, &f, &schedule)?;
        origin.sources.push(f_src.uri().to_string());
        origin.starts.push(f_start);
        origin.schedule = Some(schedule.descriptor.id());
        Ok((sample(frames, origin), schedule.descriptor))
    }
}

fn payload_path(id: u64, format: PayloadFormat) -> String {
    match format {
        PayloadFormat::Packed => format!("segments/{id:07}.sbdt"),
        PayloadFormat::PngStack => format!("segments/{id:07}"),
    }
}

/// Synthesizes a balanced dataset into `out_dir` (payloads under
/// `segments/`, manifest at `manifest.jsonl`) and returns the manifest.
///
/// Every segment is a pure function of `(sources, spec, segment_id)`, so the
/// output is identical for a fixed seed regardless of thread count.
pub fn synthesize_dataset(sources: &[AnnotatedSource], spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let synth = Synthesizer::new(sources, spec)?;
    let plan = label_plan(&spec.counts);
    let seg_dir = out_dir.join("segments");
    fs::create_dir_all(&seg_dir).at(&seg_dir)?;
    info!(
        "synthesizing {} segments from {} clean spans (seed {})",
        plan.len(),
        synth.spans().len(),
        spec.seed
    );
    let entries = plan
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let id = i as u64;
            let (sample, alpha) = synth.build(id, label)?;
            let path = payload_path(id, spec.payload);
            match spec.payload {
                PayloadFormat::Packed => write_packed(&out_dir.join(&path), &sample.frames)?,
                PayloadFormat::PngStack => write_png_stack(&out_dir.join(&path), &sample.frames)?,
            }
            Ok(ManifestEntry {
                segment_id: id,
                payload: Payload {
                    format: spec.payload,
                    path,
                },
                label,
                alpha,
                provenance: Provenance {
                    sources: sample.origin.sources,
                    starts: sample.origin.starts,
                    seed: spec.seed,
                    stream: id,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(entries)?;
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::MemorySource;
    use crate::synth::procedural::{generate_clip, ClipPlan};

    #[test]
    fn spans_avoid_transitions() {
        let ann = vec![TransitionEvent::cut(100)];
        let spans = clean_spans(0, 200, &ann, 32);
        assert_eq!(
            spans,
            vec![
                CleanSpan { source: 0, first_start: 0, last_start: 51 },
                CleanSpan { source: 0, first_start: 133, last_start: 184 },
            ]
        );
        // window [51, 66] ends 33 frames before frame 99.
        assert!(clean_spans(0, 40, &ann, 32).len() == 1);
        assert!(clean_spans(0, 15, &[], 32).is_empty());
    }

    fn sources(n: usize) -> Vec<AnnotatedSource> {
        (0..n)
            .map(|i| {
                let plan = ClipPlan { width: 64, height: 48, frames: 60, shots: 1 };
                let (frames, ann) = generate_clip(i as u64, &plan);
                AnnotatedSource::new(Box::new(MemorySource::new(format!("mem:{i}"), frames).unwrap()), ann)
            })
            .collect()
    }

    #[test]
    fn single_shot_cannot_make_transitions() {
        let srcs = sources(1);
        let spec = SynthSpec::new([(TransitionLabel::NoTransition, 2), (TransitionLabel::Sharp, 1)], 1);
        match Synthesizer::new(&srcs, &spec) {
            Err(Error::Exhausted { label, .. }) => assert_eq!(label, "sharp"),
            other => panic!("expected exhaustion, got {:?}", other.err()),
        }
        let spec = SynthSpec::new([(TransitionLabel::NoTransition, 2)], 1);
        assert!(Synthesizer::new(&srcs, &spec).is_ok());
    }

    #[test]
    fn sharp_segment_switches_shots_at_boundary() {
        let srcs = sources(2);
        let spec = SynthSpec::new([(TransitionLabel::Sharp, 4)], 3);
        let synth = Synthesizer::new(&srcs, &spec).unwrap();
        for id in 0..4 {
            let seg = synth.segment(id, TransitionLabel::Sharp).unwrap();
            let (_, d) = synth.build(id, TransitionLabel::Sharp).unwrap();
            let k = d.offset;
            let src_b = srcs.iter().find(|s| s.source.uri() == seg.origin.sources[0]).unwrap();
            let expect = ingest(&src_b.source.frame(seg.origin.starts[0] + k - 1).unwrap(), IngestPolicy::Resize).unwrap();
            assert_eq!(seg.frames.index_axis(Axis(0), k - 1), expect);
            let src_f = srcs.iter().find(|s| s.source.uri() == seg.origin.sources[1]).unwrap();
            let expect = ingest(&src_f.source.frame(seg.origin.starts[1] + k).unwrap(), IngestPolicy::Resize).unwrap();
            assert_eq!(seg.frames.index_axis(Axis(0), k), expect);
        }
    }

    #[test]
    fn segments_are_reproducible() {
        let srcs = sources(2);
        let spec = SynthSpec::new([(TransitionLabel::Gradual, 3), (TransitionLabel::Wipe, 2)], 9);
        let a = Synthesizer::new(&srcs, &spec).unwrap();
        let b = Synthesizer::new(&srcs, &spec).unwrap();
        for id in 0..3 {
            assert_eq!(
                a.segment(id, TransitionLabel::Gradual).unwrap(),
                b.segment(id, TransitionLabel::Gradual).unwrap()
            );
        }
        assert_ne!(
            a.segment(0, TransitionLabel::Wipe).unwrap().frames,
            a.segment(1, TransitionLabel::Wipe).unwrap().frames
        );
    }
}
