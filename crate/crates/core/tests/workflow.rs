use std::collections::BTreeMap;

use sbd_core::classifier::Labeler;
use sbd_core::frames::MemorySource;
use sbd_core::net::{train, C3dSbd, C3dSbdConfig, Checkpoint, TrainSchedule};
use sbd_core::pipeline::{Detector, DetectorConfig};
use sbd_core::synth::procedural::{compose_video, generate_clip, ClipPlan, VideoPlan};
use sbd_core::synth::{synthesize_dataset, AnnotatedSource, SynthSpec};
use sbd_core::{DatasetManifest, TransitionLabel, SEGMENT_LEN};

fn sources() -> Vec<AnnotatedSource> {
    let plan = ClipPlan {
        width: 64,
        height: 48,
        frames: 200,
        shots: 2,
    };
    (0..3)
        .map(|i| {
            let (frames, events) = generate_clip(100 + i, &plan);
            AnnotatedSource::new(Box::new(MemorySource::new(format!("clip{i}"), frames).unwrap()), events)
        })
        .collect()
}

fn spec(seed: u64) -> SynthSpec {
    let counts = [TransitionLabel::NoTransition, TransitionLabel::Gradual, TransitionLabel::Sharp].map(|l| (l, 4));
    SynthSpec::new(counts, seed)
}

#[test]
fn dataset_round_trips_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let srcs = sources();
    let a = synthesize_dataset(&srcs, &spec(1), &dir.path().join("a")).unwrap();
    let b = synthesize_dataset(&srcs, &spec(1), &dir.path().join("b")).unwrap();
    let c = synthesize_dataset(&srcs, &spec(2), &dir.path().join("c")).unwrap();
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    assert_ne!(a.to_jsonl().unwrap(), c.to_jsonl().unwrap());

    let read = DatasetManifest::read(&dir.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!(read, a);
    let mut counts = BTreeMap::new();
    for e in &read.entries {
        *counts.entry(e.label).or_insert(0) += 1;
        let frames = DatasetManifest::load_frames(e, &dir.path().join("a")).unwrap();
        assert_eq!(frames.dim(), (SEGMENT_LEN, 112, 112, 3));
    }
    assert_eq!(counts.values().copied().collect::<Vec<_>>(), vec![4, 4, 4]);
}

#[test]
fn train_checkpoint_detect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synthesize_dataset(&sources(), &spec(3), &data).unwrap();
    let config = C3dSbdConfig::reduced([2, 3, 4, 4, 2], [8, 8]);
    let schedule = TrainSchedule {
        epochs: 1,
        batch_size: 6,
        ..TrainSchedule::default()
    };
    let (model, log) = train(&manifest, &data, config, &schedule, 5).unwrap();
    assert!(log.final_loss.is_finite());
    assert_eq!(log.step_losses.len(), 2);

    let path = dir.path().join("model.ckpt");
    Checkpoint::new(model.clone(), Some(schedule), Some(log)).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.model.params, model.params);

    let plan = VideoPlan {
        width: 64,
        height: 48,
        shots: 3,
        ..VideoPlan::default()
    };
    let (frames, _) = compose_video(8, "v", &plan);
    let n = frames.len();
    let source = MemorySource::new("v", frames).unwrap();
    let detector = Detector::new(loaded.model, Labeler::Softmax, DetectorConfig::default()).unwrap();
    let out = detector.detect_with_segments(&source).unwrap();
    assert_eq!(out.segments.len(), sbd_core::window::segment_starts(n).len());
    for e in &out.events {
        e.validate().unwrap();
        assert!(e.end_frame < n);
        if e.label == TransitionLabel::Sharp {
            assert_eq!(e.end_frame, e.start_frame + 1);
        }
    }
    assert!(out.events.windows(2).all(|w| w[0].start_frame <= w[1].start_frame));
}

#[test]
fn untrained_model_is_deterministic() {
    let net = C3dSbd::<f32>::new(C3dSbdConfig::reduced([2, 3, 4, 4, 2], [8, 8]), 1).unwrap();
    let (frames, _) = compose_video(2, "v", &VideoPlan { width: 48, height: 48, shots: 2, ..VideoPlan::default() });
    let source = MemorySource::new("v", frames).unwrap();
    let d = Detector::new(net, Labeler::Softmax, DetectorConfig::default()).unwrap();
    assert_eq!(d.label_segments(&source).unwrap(), d.label_segments(&source).unwrap());
}
