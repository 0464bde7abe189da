//! The desk-scale workflow: procedural clips, synthesized training set,
//! reduced network, and detection on held-out composed videos.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::classifier::{to_f64, train_svm, Labeler, SvmConfig, SvmModel};
use crate::error::{IoContext, Result};
use crate::eval::{evaluate_corpus, Averaging, EvalReport, MatchPolicy};
use crate::frames::MemorySource;
use crate::manifest::DatasetManifest;
use crate::net::{train, C3dSbd, C3dSbdConfig, Checkpoint, FeatureLayer, TrainLog, TrainSchedule};
use crate::pipeline::{calibrate_threshold, Calibration, CalibrationCase, Detector, DetectorConfig};
use crate::synth::procedural::{compose_video, generate_clip, ClipPlan, VideoPlan};
use crate::synth::{synthesize_dataset, AnnotatedSource, SynthSpec};
use crate::types::{EventDocument, TransitionLabel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelerKind {
    /// One-vs-rest linear SVM on fc8 features of the training set.
    #[default]
    Svm,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub seed: u64,
    /// Training segments per class (no transition, gradual, sharp).
    pub per_class: usize,
    pub clips: usize,
    pub clip: ClipPlan,
    pub network: C3dSbdConfig,
    pub schedule: TrainSchedule,
    pub labeler: LabelerKind,
    pub svm: SvmConfig,
    pub test_videos: usize,
    /// Annotated videos for picking the histogram threshold; with none the
    /// detector's own threshold is kept.
    pub validation_videos: usize,
    pub calibration_grid: Vec<f64>,
    pub video: VideoPlan,
    pub detector: DetectorConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            seed: 2017,
            per_class: 2000,
            clips: 600,
            clip: ClipPlan {
                width: 160,
                height: 120,
                frames: 40,
                shots: 1,
            },
            network: C3dSbdConfig {
                dropout: 0.0,
                ..C3dSbdConfig::reduced([8, 16, 32, 32, 16], [128, 128])
            },
            schedule: TrainSchedule {
                base_lr: 1e-3,
                decay_every: 4,
                ..TrainSchedule::default()
            },
            labeler: LabelerKind::Svm,
            svm: SvmConfig::default(),
            test_videos: 6,
            validation_videos: 6,
            calibration_grid: (0..=40).map(|i| i as f64 * 0.025).collect(),
            video: VideoPlan::default(),
            detector: DetectorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskTimings {
    pub synth: f64,
    pub train: f64,
    pub svm: f64,
    pub calibrate: f64,
    pub detect: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskReport {
    pub segments: usize,
    pub train_log: TrainLog,
    pub svm_training_accuracy: Option<f64>,
    pub calibration: Option<Calibration>,
    pub eval: EvalReport,
    pub seconds: DeskTimings,
    pub checkpoint: PathBuf,
}

impl DeskReport {
    pub fn f(&self, label: TransitionLabel) -> f64 {
        self.eval.label(label).f_score
    }
}

fn clip_sources(cfg: &DeskConfig) -> Result<Vec<AnnotatedSource>> {
    (0..cfg.clips)
        .map(|i| {
            let (frames, events) = generate_clip(cfg.seed.wrapping_add(i as u64), &cfg.clip);
            let source = MemorySource::new(format!("clip:{i:03}"), frames)?;
            Ok(AnnotatedSource::new(Box::new(source), events))
        })
        .collect()
}

fn composed_videos(cfg: &DeskConfig, count: usize, salt: u64, prefix: &str) -> Vec<(MemorySource, EventDocument)> {
    (0..count)
        .map(|i| {
            let id = format!("{prefix}{i:02}");
            let (frames, doc) = compose_video(cfg.seed ^ salt ^ i as u64, &id, &cfg.video);
            (MemorySource::new(id, frames).expect("composed video has frames"), doc)
        })
        .collect()
}

/// Held-out test videos; seeds are disjoint from the training clips.
pub fn test_videos(cfg: &DeskConfig) -> Vec<(MemorySource, EventDocument)> {
    composed_videos(cfg, cfg.test_videos, 0x7E57_0000, "video")
}

/// Calibration videos, disjoint from both the training clips and the test set.
pub fn validation_videos(cfg: &DeskConfig) -> Vec<(MemorySource, EventDocument)> {
    composed_videos(cfg, cfg.validation_videos, 0x7A11_0000, "val")
}

/// Fits the SVM on fc8 features of the training segments.
pub fn fit_svm(model: &C3dSbd<f32>, manifest: &DatasetManifest, base: &Path, cfg: &SvmConfig, batch: usize) -> Result<SvmModel> {
    let layer = FeatureLayer::Fc8;
    let mut rows = Vec::new();
    for chunk in manifest.entries.chunks(batch.max(1)) {
        let frames = chunk
            .iter()
            .map(|e| DatasetManifest::load_frames(e, base))
            .collect::<Result<Vec<_>>>()?;
        rows.push(to_f64(&model.extract_features(frames.iter(), layer)?));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| crate::Error::Shape(e.to_string()))?;
    let labels: Vec<TransitionLabel> = manifest.entries.iter().map(|e| e.label).collect();
    train_svm(features.view(), &labels, layer, cfg)
}

/// Runs the whole workflow inside `workdir`, leaving the dataset, model,
/// detections and report there.
pub fn run_desk(cfg: &DeskConfig, workdir: &Path) -> Result<DeskReport> {
    let total = Instant::now();
    std::fs::create_dir_all(workdir).at(workdir)?;

    let t = Instant::now();
    let sources = clip_sources(cfg)?;
    let counts = [TransitionLabel::NoTransition, TransitionLabel::Gradual, TransitionLabel::Sharp].map(|l| (l, cfg.per_class));
    let spec = SynthSpec::new(counts, cfg.seed);
    let data_dir = workdir.join("dataset");
    let manifest = synthesize_dataset(&sources, &spec, &data_dir)?;
    drop(sources);
    let synth = t.elapsed().as_secs_f64();
    info!("desk: synthesized {} segments in {synth:.1}s", manifest.len());

    let t = Instant::now();
    let (model, log) = train(&manifest, &data_dir, cfg.network.clone(), &cfg.schedule, cfg.seed)?;
    let train_secs = t.elapsed().as_secs_f64();
    let checkpoint = workdir.join("model.ckpt");
    Checkpoint::new(model.clone(), Some(cfg.schedule.clone()), Some(log.clone())).save(&checkpoint)?;

    let t = Instant::now();
    let (labeler, svm_acc) = match cfg.labeler {
        LabelerKind::Svm => {
            let svm = fit_svm(&model, &manifest, &data_dir, &cfg.svm, cfg.detector.batch_size)?;
            svm.write(&workdir.join("svm.json"))?;
            let acc = svm.training_accuracy;
            (Labeler::Svm(svm), Some(acc))
        }
        LabelerKind::Softmax => (Labeler::Softmax, None),
    };
    let svm_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut detector = Detector::new(model, labeler, cfg.detector.clone())?;
    let validation = validation_videos(cfg);
    let calibration = if validation.is_empty() {
        None
    } else {
        let cases = validation
            .iter()
            .map(|(source, truth)| {
                Ok(CalibrationCase {
                    source,
                    labelings: detector.label_segments(source)?,
                    annotations: truth.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cal = calibrate_threshold(&cases, &cfg.detector.post, &cfg.calibration_grid)?;
        info!("desk: histogram threshold {:.3} (validation gradual F {:.3})", cal.threshold, cal.gradual_f);
        detector.config.post.threshold = cal.threshold;
        Some(cal)
    };
    let calibrate = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let det_dir = workdir.join("detections");
    std::fs::create_dir_all(&det_dir).at(&det_dir)?;
    let mut pairs = Vec::new();
    for (source, truth) in test_videos(cfg) {
        let events = detector.detect(&source)?;
        let doc = EventDocument::new(truth.video_id.clone(), events);
        doc.write(&det_dir.join(format!("{}.json", truth.video_id)))?;
        truth.write(&det_dir.join(format!("{}.truth.json", truth.video_id)))?;
        pairs.push((doc, truth));
    }
    let eval = evaluate_corpus(&pairs, MatchPolicy::LabelStrict, Averaging::PerTransition)?;
    let detect = t.elapsed().as_secs_f64();

    let report = DeskReport {
        segments: manifest.len(),
        train_log: log,
        svm_training_accuracy: svm_acc,
        calibration,
        eval,
        seconds: DeskTimings {
            synth,
            train: train_secs,
            svm: svm_secs,
            calibrate,
            detect,
            total: total.elapsed().as_secs_f64(),
        },
        checkpoint,
    };
    std::fs::write(workdir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n").at(workdir)?;
    Ok(report)
}
