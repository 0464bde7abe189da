//! Per-transition evaluation, F-scores, throughput benchmarking and conv5
//! filter-response maps.

mod bench;
mod heatmap;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EventDocument, TransitionEvent, TransitionLabel};

pub use bench::{benchmark, BenchCell, BenchConfig, CellStatus, ThroughputReport, TimingMode};
pub use heatmap::{filter_heatmap, temporal_roughness, Heatmap};

/// Whether a detection must carry the annotation's label to match it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    #[default]
    LabelStrict,
    /// Any transition label matches any other; everything is reported under
    /// the overall row.
    Combined,
}

/// How per-video results are pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Counts are summed over all transitions of all videos.
    #[default]
    PerTransition,
    /// Precision, recall and F are averaged over videos.
    PerSequence,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(p: f64, r: f64) -> Result<f64> {
    for v in [p, r] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(v));
        }
    }
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl ClassReport {
    /// Scores from counts. An empty denominator counts as perfect: no
    /// detections means no false ones, no annotations means none missed.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 1.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 1.0 };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_score: f_score(precision, recall).expect("ratios lie in [0, 1]"),
        }
    }

    fn add(&mut self, other: &ClassReport) {
        *self = Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: MatchPolicy,
    pub averaging: Averaging,
    pub videos: usize,
    pub per_label: BTreeMap<TransitionLabel, ClassReport>,
    pub overall: ClassReport,
}

impl EvalReport {
    pub fn label(&self, label: TransitionLabel) -> ClassReport {
        self.per_label.get(&label).copied().unwrap_or_default()
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "policy: {:?}, averaging: {:?}, videos: {}",
            self.policy, self.averaging, self.videos
        );
        let _ = writeln!(out, "{:<14} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}", "label", "TP", "FP", "FN", "P", "R", "F");
        let rows = self.per_label.iter().map(|(l, r)| (l.to_string(), r)).chain([("overall".to_string(), &self.overall)]);
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>6} {:>6} {:>7.3} {:>7.3} {:>7.3}",
                name, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f_score
            );
        }
        out
    }
}

fn compatible(d: &TransitionEvent, a: &TransitionEvent, policy: MatchPolicy) -> bool {
    let labels_ok = match policy {
        MatchPolicy::LabelStrict => d.label == a.label,
        MatchPolicy::Combined => true,
    };
    labels_ok && d.overlap(a) > 0
}

/// One-to-one matching of detections to annotations. Pairs are taken
/// greedily by largest overlap (ties: earliest detection, then earliest
/// annotation); augmenting paths then add any matches the greedy pass
/// blocked, so the number of matched pairs is maximum. Returns
/// `(detection, annotation)` index pairs sorted by detection.
pub fn match_events(detections: &[TransitionEvent], annotations: &[TransitionEvent], policy: MatchPolicy) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        for (j, a) in annotations.iter().enumerate() {
            if compatible(d, a, policy) {
                candidates.push((d.overlap(a), i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then(detections[x.1].start_frame.cmp(&detections[y.1].start_frame))
            .then(x.1.cmp(&y.1))
            .then(annotations[x.2].start_frame.cmp(&annotations[y.2].start_frame))
            .then(x.2.cmp(&y.2))
    });
    let mut det_of: Vec<Option<usize>> = vec![None; annotations.len()];
    let mut ann_of: Vec<Option<usize>> = vec![None; detections.len()];
    for &(_, i, j) in &candidates {
        if ann_of[i].is_none() && det_of[j].is_none() {
            ann_of[i] = Some(j);
            det_of[j] = Some(i);
        }
    }
    let adj: Vec<Vec<usize>> = (0..detections.len())
        .map(|i| {
            candidates
                .iter()
                .filter(|c| c.1 == i)
                .map(|c| c.2)
                .collect()
        })
        .collect();
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], det_of: &mut [Option<usize>], ann_of: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            let free = match det_of[j] {
                None => true,
                Some(k) => augment(k, adj, seen, det_of, ann_of),
            };
            if free {
                det_of[j] = Some(i);
                ann_of[i] = Some(j);
                return true;
            }
        }
        false
    }
    for i in 0..detections.len() {
        if ann_of[i].is_none() {
            let mut seen = vec![false; annotations.len()];
            augment(i, &adj, &mut seen, &mut det_of, &mut ann_of);
        }
    }
    ann_of
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

fn check_same_video(detections: &EventDocument, annotations: &EventDocument) -> Result<()> {
    if detections.video_id != annotations.video_id {
        return Err(Error::VideoId(detections.video_id.clone(), annotations.video_id.clone()));
    }
    Ok(())
}

fn video_report(detections: &[TransitionEvent], annotations: &[TransitionEvent], policy: MatchPolicy) -> (BTreeMap<TransitionLabel, ClassReport>, ClassReport) {
    let pairs = match_events(detections, annotations, policy);
    let mut matched_det = vec![false; detections.len()];
    let mut matched_ann = vec![false; annotations.len()];
    for &(i, j) in &pairs {
        matched_det[i] = true;
        matched_ann[j] = true;
    }
    let mut per_label: BTreeMap<TransitionLabel, (usize, usize, usize)> = BTreeMap::new();
    if policy == MatchPolicy::LabelStrict {
        for (d, &m) in detections.iter().zip(&matched_det) {
            let c = per_label.entry(d.label).or_default();
            if m {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for (a, &m) in annotations.iter().zip(&matched_ann) {
            if !m {
                per_label.entry(a.label).or_default().2 += 1;
            }
        }
    }
    let tp = pairs.len();
    let overall = ClassReport::from_counts(tp, detections.len() - tp, annotations.len() - tp);
    let per_label = per_label.into_iter().map(|(l, (tp, fp, fn_))| (l, ClassReport::from_counts(tp, fp, fn_))).collect();
    (per_label, overall)
}

/// Scores one video's detections against its annotations.
pub fn evaluate(detections: &EventDocument, annotations: &EventDocument, policy: MatchPolicy) -> Result<EvalReport> {
    evaluate_corpus(&[(detections.clone(), annotations.clone())], policy, Averaging::PerTransition)
}

/// Scores a set of `(detections, annotations)` video pairs.
pub fn evaluate_corpus(pairs: &[(EventDocument, EventDocument)], policy: MatchPolicy, averaging: Averaging) -> Result<EvalReport> {
    let mut per_video = Vec::new();
    for (d, a) in pairs {
        check_same_video(d, a)?;
        for e in d.events.iter().chain(&a.events) {
            e.validate()?;
        }
        per_video.push(video_report(&d.events, &a.events, policy));
    }
    let mut per_label: BTreeMap<TransitionLabel, ClassReport> = BTreeMap::new();
    let mut overall = ClassReport::from_counts(0, 0, 0);
    match averaging {
        Averaging::PerTransition => {
            for (labels, all) in &per_video {
                for (l, r) in labels {
                    per_label.entry(*l).or_insert_with(|| ClassReport::from_counts(0, 0, 0)).add(r);
                }
                overall.add(all);
            }
        }
        Averaging::PerSequence => {
            let mean = |rows: Vec<ClassReport>| -> ClassReport {
                let n = rows.len().max(1) as f64;
                let mut out = ClassReport::default();
                for r in &rows {
                    out.tp += r.tp;
                    out.fp += r.fp;
                    out.fn_ += r.fn_;
                    out.precision += r.precision / n;
                    out.recall += r.recall / n;
                    out.f_score += r.f_score / n;
                }
                out
            };
            let labels: Vec<TransitionLabel> = per_video.iter().flat_map(|(m, _)| m.keys().copied()).collect();
            for l in labels {
                if per_label.contains_key(&l) {
                    continue;
                }
                let rows = per_video
                    .iter()
                    .map(|(m, _)| m.get(&l).copied().unwrap_or_else(|| ClassReport::from_counts(0, 0, 0)))
                    .collect();
                per_label.insert(l, mean(rows));
            }
            overall = mean(per_video.iter().map(|(_, o)| *o).collect());
        }
    }
    Ok(EvalReport {
        policy,
        averaging,
        videos: pairs.len(),
        per_label,
        overall,
    })
}
