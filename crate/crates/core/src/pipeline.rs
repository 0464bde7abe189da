//! The detector: windowing, per-segment labeling, run merging and histogram
//! post-processing.

use serde::{Deserialize, Serialize};

use crate::classifier::{to_f64, Labeler};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, Averaging, MatchPolicy};
use crate::frames::{Frame, FrameSource};
use crate::net::{segments_to_tensor, C3dSbd};
use crate::types::{EventDocument, TransitionEvent, TransitionLabel, SEGMENT_LEN, SEGMENT_STRIDE};
use crate::window::{IngestPolicy, Windower};

/// The label assigned to one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabeling {
    pub index: usize,
    pub start_frame: usize,
    pub label: TransitionLabel,
    pub score: f64,
}

/// Collapses maximal runs of equal transition labels into events spanning
/// `[first start, last start + 15]`, scored by the best member.
pub fn merge_labelings(labelings: &[SegmentLabeling]) -> Result<Vec<TransitionEvent>> {
    for (k, l) in labelings.iter().enumerate() {
        if l.start_frame % SEGMENT_STRIDE != 0 {
            return Err(Error::Ordering(format!("segment start {} is not a multiple of 8", l.start_frame)));
        }
        if k > 0 && l.start_frame != labelings[k - 1].start_frame + SEGMENT_STRIDE {
            return Err(Error::Ordering(format!(
                "segment start {} does not follow {}",
                l.start_frame,
                labelings[k - 1].start_frame
            )));
        }
    }
    let mut events: Vec<TransitionEvent> = Vec::new();
    let mut open = false;
    for l in labelings {
        let end = l.start_frame + SEGMENT_LEN - 1;
        if !l.label.is_transition() {
            open = false;
            continue;
        }
        match events.last_mut() {
            Some(e) if open && e.label == l.label => {
                e.end_frame = end;
                e.score = e.score.max(l.score);
            }
            _ => events.push(TransitionEvent::new(l.label, l.start_frame, end, l.score)),
        }
        open = true;
    }
    Ok(events)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramSpace {
    #[default]
    Hsv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcessConfig {
    pub space: HistogramSpace,
    /// Bins for hue, saturation and value.
    pub bins: [usize; 3],
    /// Gradual and wipe events whose end-frame histograms are closer than
    /// this are dropped.
    pub threshold: f64,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            space: HistogramSpace::Hsv,
            bins: [16, 16, 16],
            threshold: 0.2,
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins.iter().any(|&b| b < 2) {
            return Err(Error::Config(format!("histogram bins must be >= 2, got {:?}", self.bins)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Domain(self.threshold));
        }
        Ok(())
    }
}

fn rgb_to_hsv(p: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = p.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

/// Normalized joint HSV histogram with `bins[0] * bins[1] * bins[2]` cells.
/// A frame without pixels gets the uniform histogram.
pub fn hsv_histogram(frame: &Frame, bins: [usize; 3]) -> Vec<f64> {
    let len = bins.iter().product::<usize>();
    let mut hist = vec![0.0; len];
    let bin = |v: f64, n: usize| ((v * n as f64) as usize).min(n - 1);
    for p in frame.pixels() {
        let [h, s, v] = rgb_to_hsv(p.0);
        hist[(bin(h, bins[0]) * bins[1] + bin(s, bins[1])) * bins[2] + bin(v, bins[2])] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        return vec![1.0 / len as f64; len];
    }
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}

/// `sqrt(1 - sum sqrt(h1 * h2))` for normalized histograms.
pub fn bhattacharyya(h1: &[f64], h2: &[f64]) -> f64 {
    let bc: f64 = h1.iter().zip(h2).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// Histogram distance between two frames of a source.
pub fn frame_distance(source: &dyn FrameSource, a: usize, b: usize, cfg: &PostProcessConfig) -> Result<f64> {
    let ha = hsv_histogram(&source.frame(a)?, cfg.bins);
    let hb = hsv_histogram(&source.frame(b)?, cfg.bins);
    Ok(bhattacharyya(&ha, &hb))
}

/// Whether a detected event survives post-processing. Sharp events always
/// do; gradual and wipe events are kept when their first and last frames
/// are at least `threshold` apart.
pub fn bhattacharyya_filter(event: &TransitionEvent, source: &dyn FrameSource, cfg: &PostProcessConfig) -> Result<bool> {
    if event.label != TransitionLabel::Gradual && event.label != TransitionLabel::Wipe {
        return Ok(true);
    }
    Ok(frame_distance(source, event.start_frame, event.end_frame, cfg)? >= cfg.threshold)
}

/// Narrows a sharp event to the adjacent frame pair with the largest
/// histogram distance (earliest on ties).
pub fn localize_sharp(event: &TransitionEvent, source: &dyn FrameSource, cfg: &PostProcessConfig) -> Result<TransitionEvent> {
    if event.end_frame <= event.start_frame {
        return Err(Error::Shape(format!("cannot localize a cut inside {}..{}", event.start_frame, event.end_frame)));
    }
    let mut prev = hsv_histogram(&source.frame(event.start_frame)?, cfg.bins);
    let mut best = (f64::NEG_INFINITY, event.start_frame);
    for k in event.start_frame + 1..=event.end_frame {
        let cur = hsv_histogram(&source.frame(k)?, cfg.bins);
        let d = bhattacharyya(&prev, &cur);
        if d > best.0 {
            best = (d, k - 1);
        }
        prev = cur;
    }
    Ok(TransitionEvent::new(TransitionLabel::Sharp, best.1, best.1 + 1, event.score))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Segments per network forward pass.
    pub batch_size: usize,
    pub ingest: IngestPolicy,
    pub post: PostProcessConfig,
    /// Apply the histogram filter to gradual and wipe events.
    pub post_process: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            ingest: IngestPolicy::Resize,
            post: PostProcessConfig::default(),
            post_process: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.post.validate()
    }
}

/// Detector output with the per-segment labels it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub events: Vec<TransitionEvent>,
    pub segments: Vec<SegmentLabeling>,
}

/// A trained network plus the labeler on top of its features.
#[derive(Clone, Debug)]
pub struct Detector {
    pub model: C3dSbd<f32>,
    pub labeler: Labeler,
    pub config: DetectorConfig,
}

impl Detector {
    pub fn new(model: C3dSbd<f32>, labeler: Labeler, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        if let Labeler::Svm(svm) = &labeler {
            let width = svm.layer.width(model.config());
            if width != svm.width {
                return Err(Error::Config(format!(
                    "svm expects {} features from {}, network produces {width}",
                    svm.width,
                    svm.layer.as_str()
                )));
            }
        }
        Ok(Self { model, labeler, config })
    }

    /// Labels one batch of segment tensors.
    pub fn label_batch<'a>(&self, frames: impl IntoIterator<Item = &'a ndarray::Array4<u8>>) -> Result<Vec<(TransitionLabel, f64)>> {
        let x = segments_to_tensor::<f32>(frames)?;
        let layer = self.labeler.layer();
        let out = self.model.forward(x.view(), &[layer])?;
        let features = to_f64(&out.features[&layer]);
        let probs = to_f64(&out.probs);
        self.labeler.label(features.view(), probs.view())
    }

    /// Labels every segment of a source, streaming frames in batches.
    pub fn label_segments(&self, source: &dyn FrameSource) -> Result<Vec<SegmentLabeling>> {
        if source.frame_count() == 0 {
            return Err(Error::EmptySource(source.uri().to_string()));
        }
        let mut windows = Windower::new(source, self.config.ingest);
        let mut out = Vec::with_capacity(windows.len());
        loop {
            let batch: Vec<_> = windows.by_ref().take(self.config.batch_size).collect::<Result<_>>()?;
            if batch.is_empty() {
                break;
            }
            let labels = self.label_batch(batch.iter().map(|s| &s.frames))?;
            for (seg, (label, score)) in batch.iter().zip(labels) {
                out.push(SegmentLabeling {
                    index: out.len(),
                    start_frame: seg.start_frame,
                    label,
                    score,
                });
            }
        }
        Ok(out)
    }

    pub fn detect(&self, source: &dyn FrameSource) -> Result<Vec<TransitionEvent>> {
        Ok(self.detect_with_segments(source)?.events)
    }

    pub fn detect_with_segments(&self, source: &dyn FrameSource) -> Result<Detection> {
        let segments = self.label_segments(source)?;
        let events = postprocess(&segments, source, &self.config.post, self.config.post_process)?;
        Ok(Detection { events, segments })
    }
}

/// Merges labelings and turns the runs into final events: ranges clipped
/// to real frames, cuts localized, and (if `filter`) low-change gradual and
/// wipe events dropped.
pub fn postprocess(labelings: &[SegmentLabeling], source: &dyn FrameSource, cfg: &PostProcessConfig, filter: bool) -> Result<Vec<TransitionEvent>> {
    let candidates = candidate_events(labelings, source, cfg)?;
    let mut events = Vec::new();
    for (event, distance) in candidates {
        if filter && distance.is_some_and(|d| d < cfg.threshold) {
            continue;
        }
        events.push(event);
    }
    Ok(events)
}

/// Events before filtering, each with its end-frame histogram distance when
/// the filter applies to it.
fn candidate_events(labelings: &[SegmentLabeling], source: &dyn FrameSource, cfg: &PostProcessConfig) -> Result<Vec<(TransitionEvent, Option<f64>)>> {
    let n = source.frame_count();
    if n == 0 {
        return Err(Error::EmptySource(source.uri().to_string()));
    }
    let mut out = Vec::new();
    for mut event in merge_labelings(labelings)? {
        if event.start_frame >= n {
            continue;
        }
        event.end_frame = event.end_frame.min(n - 1);
        match event.label {
            TransitionLabel::Sharp => {
                if event.end_frame > event.start_frame {
                    out.push((localize_sharp(&event, source, cfg)?, None));
                }
            }
            _ => {
                let d = frame_distance(source, event.start_frame, event.end_frame, cfg)?;
                out.push((event, Some(d)));
            }
        }
    }
    out.sort_by(|a, b| (a.0.start_frame, a.0.label).cmp(&(b.0.start_frame, b.0.label)));
    Ok(out)
}

/// One held-out video for threshold calibration.
pub struct CalibrationCase<'a> {
    pub source: &'a dyn FrameSource,
    pub labelings: Vec<SegmentLabeling>,
    pub annotations: EventDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub gradual_f: f64,
    /// `(threshold, gradual F)` for every grid point.
    pub sweep: Vec<(f64, f64)>,
}

/// Picks the threshold from `grid` that maximizes gradual F over the cases;
/// the smallest such threshold wins ties.
pub fn calibrate_threshold(cases: &[CalibrationCase<'_>], base: &PostProcessConfig, grid: &[f64]) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(Error::Config("calibration grid is empty".into()));
    }
    let candidates: Vec<_> = cases
        .iter()
        .map(|c| candidate_events(&c.labelings, c.source, base))
        .collect::<Result<_>>()?;
    let mut sweep = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        PostProcessConfig { threshold: t, ..base.clone() }.validate()?;
        let pairs: Vec<(EventDocument, EventDocument)> = cases
            .iter()
            .zip(&candidates)
            .map(|(c, cand)| {
                let events = cand
                    .iter()
                    .filter(|(_, d)| d.is_none_or(|d| d >= t))
                    .map(|(e, _)| e.clone())
                    .collect();
                (EventDocument::new(c.annotations.video_id.clone(), events), c.annotations.clone())
            })
            .collect();
        let report = evaluate_corpus(&pairs, MatchPolicy::LabelStrict, Averaging::PerTransition)?;
        let f = report.label(TransitionLabel::Gradual).f_score;
        sweep.push((t, f));
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((t, f));
        }
    }
    let (threshold, gradual_f) = best.expect("non-empty grid");
    Ok(Calibration { threshold, gradual_f, sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::MemorySource;
    use crate::synth::procedural::still;
    use image::RgbImage;
    use proptest::prelude::*;

    fn labeling(labels: &[TransitionLabel]) -> Vec<SegmentLabeling> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| SegmentLabeling {
                index: i,
                start_frame: 8 * i,
                label,
                score: 0.5 + 0.01 * i as f64,
            })
            .collect()
    }

    use TransitionLabel::{Gradual as G, NoTransition as N, Sharp as S};

    #[test]
    fn merges_a_gradual_run() {
        let ev = merge_labelings(&labeling(&[N, G, G, N])).unwrap();
        assert_eq!(ev, vec![TransitionEvent::new(G, 8, 31, 0.52)]);
    }

    #[test]
    fn label_changes_break_runs() {
        let ev = merge_labelings(&labeling(&[G, S, G])).unwrap();
        assert_eq!(ev.len(), 3);
    }

    #[test]
    fn unordered_input_is_rejected() {
        let mut l = labeling(&[G, G, G]);
        l.swap(0, 1);
        assert!(matches!(merge_labelings(&l), Err(Error::Ordering(_))));
        let mut l = labeling(&[G]);
        l[0].start_frame = 4;
        assert!(merge_labelings(&l).is_err());
    }

    #[test]
    fn bhattacharyya_examples() {
        let d = bhattacharyya(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((d - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-12);
        assert!((d - 0.5412).abs() < 1e-4);
        assert_eq!(bhattacharyya(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(bhattacharyya(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn hsv_matches_reference_colours() {
        assert_eq!(rgb_to_hsv([255, 0, 0]), [0.0, 1.0, 1.0]);
        let [h, s, v] = rgb_to_hsv([0, 255, 0]);
        assert!((h - 1.0 / 3.0).abs() < 1e-12 && s == 1.0 && v == 1.0);
        let [h, ..] = rgb_to_hsv([0, 0, 255]);
        assert!((h - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rgb_to_hsv([0, 0, 0]), [0.0, 0.0, 0.0]);
        let h = hsv_histogram(&RgbImage::new(0, 0), [2, 2, 2]);
        assert_eq!(h, vec![0.125; 8]);
    }

    #[test]
    fn filter_on_identical_and_disjoint_frames() {
        let mut frames = still(32, 24, [200, 10, 10], 20);
        frames.extend(still(32, 24, [10, 10, 200], 20));
        let src = MemorySource::new("mem", frames).unwrap();
        let cfg = PostProcessConfig::default();
        let same = TransitionEvent::new(G, 0, 15, 1.0);
        assert!(!bhattacharyya_filter(&same, &src, &cfg).unwrap());
        let across = TransitionEvent::new(G, 5, 30, 1.0);
        assert!(bhattacharyya_filter(&across, &src, &cfg).unwrap());
        assert!(bhattacharyya_filter(&TransitionEvent::new(S, 0, 15, 1.0), &src, &cfg).unwrap());
    }

    #[test]
    fn localizes_a_cut() {
        let mut frames = still(16, 16, [30, 120, 30], 13);
        frames.extend(still(16, 16, [240, 240, 20], 20));
        let src = MemorySource::new("cut", frames).unwrap();
        let cfg = PostProcessConfig::default();
        let e = localize_sharp(&TransitionEvent::new(S, 0, 23, 0.9), &src, &cfg).unwrap();
        assert_eq!((e.start_frame, e.end_frame), (12, 13));
        let e = localize_sharp(&TransitionEvent::new(S, 4, 5, 0.9), &src, &cfg).unwrap();
        assert_eq!((e.start_frame, e.end_frame), (4, 5));
    }

    #[test]
    fn postprocess_clips_and_sorts() {
        let mut frames = still(16, 16, [0, 0, 0], 20);
        frames.extend(still(16, 16, [250, 250, 250], 11));
        let src = MemorySource::new("p", frames).unwrap();
        let labels = labeling(&[N, S, S, G]);
        let ev = postprocess(&labels, &src, &PostProcessConfig::default(), true).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].start_frame, ev[0].end_frame, ev[0].label), (19, 20, S));
        let unfiltered = postprocess(&labels, &src, &PostProcessConfig::default(), false).unwrap();
        assert_eq!(unfiltered.len(), 2);
        assert_eq!(unfiltered[1].end_frame, 30);
    }

    /// Run-length encoding written independently of `merge_labelings`.
    fn rle(labels: &[TransitionLabel]) -> Vec<(TransitionLabel, usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            let mut j = i;
            while j + 1 < labels.len() && labels[j + 1] == labels[i] {
                j += 1;
            }
            if labels[i] != N {
                out.push((labels[i], 8 * i, 8 * j + 15));
            }
            i = j + 1;
        }
        out
    }

    fn any_label() -> impl Strategy<Value = TransitionLabel> {
        prop::sample::select(TransitionLabel::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn merge_equals_rle(labels in prop::collection::vec(any_label(), 0..40)) {
            let ev = merge_labelings(&labeling(&labels)).unwrap();
            let got: Vec<_> = ev.iter().map(|e| (e.label, e.start_frame, e.end_frame)).collect();
            prop_assert_eq!(got, rle(&labels));
        }

        #[test]
        fn merge_is_idempotent(labels in prop::collection::vec(any_label(), 0..40)) {
            let once = merge_labelings(&labeling(&labels)).unwrap();
            // Re-express events as per-segment labels.
            let mut again = vec![N; labels.len()];
            for e in &once {
                for (i, slot) in again.iter_mut().enumerate() {
                    if 8 * i >= e.start_frame && 8 * i + 15 <= e.end_frame {
                        *slot = e.label;
                    }
                }
            }
            let twice = merge_labelings(&labeling(&again)).unwrap();
            let strip = |v: &[TransitionEvent]| v.iter().map(|e| (e.label, e.start_frame, e.end_frame)).collect::<Vec<_>>();
            prop_assert_eq!(strip(&once), strip(&twice));
        }
    }
}
