//! Command implementations. Each command resolves its configuration
//! record, snapshots it, then writes its outputs under `--out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sbd_core::classifier::{Labeler, SvmConfig, SvmModel};
use sbd_core::desk::{fit_svm, run_desk, DeskConfig};
use sbd_core::eval::{benchmark, evaluate_corpus, filter_heatmap, temporal_roughness, Averaging, BenchConfig, MatchPolicy};
use sbd_core::frames::{write_y4m, FrameSource, MemorySource};
use sbd_core::net::{train, C3dSbd, C3dSbdConfig, Checkpoint, TrainSchedule};
use sbd_core::pipeline::{calibrate_threshold, CalibrationCase, Detector, DetectorConfig};
use sbd_core::synth::procedural::{compose_video, generate_clip, ClipPlan, VideoPlan};
use sbd_core::synth::{export_bootstrap_candidates, import_bootstrap_labels, synthesize_dataset, AnnotatedSource, SynthSpec};
use sbd_core::window::segment_at;
use sbd_core::{open_frame_source, DatasetManifest, EventDocument, Fps, TransitionEvent, TransitionLabel};

use crate::config::{self, Global};

pub fn dispatch(global: &Global, file: &Value, section: &str, layer: &Value) -> Result<()> {
    match section {
        "clips" => clips(global, resolved(global, file, section, layer)?),
        "videos" => videos(global, resolved(global, file, section, layer)?),
        "synth" => synth(global, resolved(global, file, section, layer)?),
        "train" => train_cmd(global, resolved(global, file, section, layer)?),
        "detect" => detect(global, resolved(global, file, section, layer)?),
        "calibrate" => calibrate(global, resolved(global, file, section, layer)?),
        "eval" => eval(global, resolved(global, file, section, layer)?),
        "bench" => bench(global, resolved(global, file, section, layer)?),
        "bootstrap_export" => bootstrap_export(global, resolved(global, file, section, layer)?),
        "bootstrap_import" => bootstrap_import(global, resolved(global, file, section, layer)?),
        "heatmap" => heatmap(global, resolved(global, file, section, layer)?),
        "desk" => desk(global, resolved(global, file, section, layer)?),
        other => bail!("unknown command section {other}"),
    }
}

fn resolved<R: Serialize + DeserializeOwned + Default>(global: &Global, file: &Value, section: &str, layer: &Value) -> Result<R> {
    let r: R = config::resolve(file, section, layer)?;
    let path = config::write_snapshot(global, section, &r)?;
    info!("{section}: resolved configuration written to {}", path.display());
    Ok(r)
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().with_context(|| format!("missing --{flag} (or its config entry)"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Video id of a source path: the file stem or directory name.
fn video_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn open(path: &Path) -> Result<Box<dyn FrameSource>> {
    Ok(open_frame_source(&path.to_string_lossy())?)
}

/// Event documents in a file or a directory of `*.json` files (per-segment
/// dumps excluded), keyed by video id.
fn read_documents(path: &Path) -> Result<BTreeMap<String, EventDocument>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            let p = entry?.path();
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if name.ends_with(".json") && !name.ends_with(".segments.json") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = BTreeMap::new();
    for f in files {
        let doc = EventDocument::read(&f)?;
        ensure!(!out.contains_key(&doc.video_id), "duplicate video id {} in {}", doc.video_id, path.display());
        out.insert(doc.video_id.clone(), doc);
    }
    Ok(out)
}

fn load_detector(checkpoint: &Path, svm: Option<&PathBuf>, cfg: DetectorConfig) -> Result<Detector> {
    let ck = Checkpoint::load(checkpoint)?;
    let labeler = match svm {
        Some(p) => Labeler::Svm(SvmModel::read(p)?),
        None => Labeler::Softmax,
    };
    Ok(Detector::new(ck.model, labeler, cfg)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct ClipsCfg {
    count: usize,
    plan: ClipPlan,
}

impl Default for ClipsCfg {
    fn default() -> Self {
        Self {
            count: 8,
            plan: ClipPlan::default(),
        }
    }
}

fn clips(global: &Global, cfg: ClipsCfg) -> Result<()> {
    let dir = global.out.join("clips");
    fs::create_dir_all(&dir)?;
    for i in 0..cfg.count {
        let name = format!("clip{i:03}");
        let (frames, events) = generate_clip(global.seed.wrapping_add(i as u64), &cfg.plan);
        write_y4m(&dir.join(format!("{name}.y4m")), &frames, Fps::default())?;
        EventDocument::new(name.clone(), events).write(&dir.join(format!("{name}.json")))?;
    }
    info!("clips: wrote {} clips to {}", cfg.count, dir.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct VideosCfg {
    count: usize,
    plan: VideoPlan,
}

impl Default for VideosCfg {
    fn default() -> Self {
        Self {
            count: 4,
            plan: VideoPlan::default(),
        }
    }
}

fn videos(global: &Global, cfg: VideosCfg) -> Result<()> {
    let dir = global.out.join("videos");
    let truth = global.out.join("annotations");
    fs::create_dir_all(&dir)?;
    fs::create_dir_all(&truth)?;
    for i in 0..cfg.count {
        let id = format!("video{i:02}");
        let (frames, doc) = compose_video(global.seed.wrapping_add(i as u64), &id, &cfg.plan);
        write_y4m(&dir.join(format!("{id}.y4m")), &frames, Fps::default())?;
        doc.write(&truth.join(format!("{id}.json")))?;
    }
    info!("videos: wrote {} videos to {}", cfg.count, dir.display());
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthCfg {
    sources: Option<PathBuf>,
    /// A `SynthSpec` JSON file; its seed is replaced by `--seed`.
    spec_file: Option<PathBuf>,
    per_class: Option<usize>,
    wipes: Option<usize>,
}

/// Sources under a directory: `.y4m` files and image directories, sorted by
/// name, each with the annotations of a sibling `<name>.json` if present.
fn load_sources(dir: &Path) -> Result<Vec<AnnotatedSource>> {
    ensure!(dir.is_dir(), "sources directory {} does not exist", dir.display());
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let is_video = p.is_dir() || p.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m"));
        if !is_video {
            continue;
        }
        let sidecar = p.with_extension("json");
        let annotations = if sidecar.is_file() && sidecar != p {
            EventDocument::read(&sidecar)?.events
        } else {
            Vec::new()
        };
        out.push(AnnotatedSource::new(open(&p)?, annotations));
    }
    ensure!(!out.is_empty(), "no .y4m files or image directories in {}", dir.display());
    Ok(out)
}

fn synth(global: &Global, cfg: SynthCfg) -> Result<()> {
    let sources = load_sources(required(&cfg.sources, "sources")?)?;
    let mut spec = match &cfg.spec_file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let n = cfg.per_class.unwrap_or(100);
            SynthSpec::new([TransitionLabel::NoTransition, TransitionLabel::Gradual, TransitionLabel::Sharp].map(|l| (l, n)), 0)
        }
    };
    if let Some(w) = cfg.wipes {
        spec.counts.insert(TransitionLabel::Wipe, w);
    }
    spec.seed = global.seed;
    let out = global.out.join("dataset");
    let manifest = synthesize_dataset(&sources, &spec, &out)?;
    for label in TransitionLabel::ALL {
        info!("synth: {label}: {}", manifest.count(label));
    }
    info!("synth: manifest at {}", out.join("manifest.jsonl").display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainCfg {
    manifest: Option<PathBuf>,
    network: C3dSbdConfig,
    schedule: TrainSchedule,
    fit_svm: bool,
    svm: SvmConfig,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            manifest: None,
            network: C3dSbdConfig::default(),
            schedule: TrainSchedule::default(),
            fit_svm: true,
            svm: SvmConfig::default(),
        }
    }
}

fn train_cmd(global: &Global, cfg: TrainCfg) -> Result<()> {
    let manifest_path = required(&cfg.manifest, "manifest")?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (model, log) = train(&manifest, base, cfg.network.clone(), &cfg.schedule, global.seed)?;
    info!("train: final loss {:.4}", log.final_loss);
    let ck_path = global.out.join("model.ckpt");
    Checkpoint::new(model.clone(), Some(cfg.schedule.clone()), Some(log.clone())).save(&ck_path)?;
    write_json(&global.out.join("train-log.json"), &log)?;
    if cfg.fit_svm {
        let mut svm_cfg = cfg.svm.clone();
        svm_cfg.seed = global.seed;
        let svm = fit_svm(&model, &manifest, base, &svm_cfg, cfg.schedule.batch_size)?;
        info!("train: svm training accuracy {:.3}", svm.training_accuracy);
        svm.write(&global.out.join("svm.json"))?;
    }
    info!("train: checkpoint at {}", ck_path.display());
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct DetectCfg {
    checkpoint: Option<PathBuf>,
    svm: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    detector: DetectorConfig,
    dump_segments: bool,
}

fn detect(global: &Global, cfg: DetectCfg) -> Result<()> {
    ensure!(!cfg.inputs.is_empty(), "missing --input");
    let detector = load_detector(required(&cfg.checkpoint, "checkpoint")?, cfg.svm.as_ref(), cfg.detector.clone())?;
    let dir = global.out.join("detections");
    fs::create_dir_all(&dir)?;
    for input in &cfg.inputs {
        let source = open(input)?;
        let id = video_id(input);
        let result = detector.detect_with_segments(&*source)?;
        info!("detect: {id}: {} events from {} segments", result.events.len(), result.segments.len());
        EventDocument::new(id.clone(), result.events).write(&dir.join(format!("{id}.json")))?;
        if cfg.dump_segments {
            write_json(&dir.join(format!("{id}.segments.json")), &result.segments)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateCfg {
    checkpoint: Option<PathBuf>,
    svm: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    annotations: Option<PathBuf>,
    grid: Vec<f64>,
    detector: DetectorConfig,
}

impl Default for CalibrateCfg {
    fn default() -> Self {
        Self {
            checkpoint: None,
            svm: None,
            inputs: Vec::new(),
            annotations: None,
            grid: (0..=20).map(|k| k as f64 * 0.025).collect(),
            detector: DetectorConfig::default(),
        }
    }
}

fn calibrate(global: &Global, cfg: CalibrateCfg) -> Result<()> {
    ensure!(!cfg.inputs.is_empty(), "missing --input");
    let detector = load_detector(required(&cfg.checkpoint, "checkpoint")?, cfg.svm.as_ref(), cfg.detector.clone())?;
    let truth = read_documents(required(&cfg.annotations, "annotations")?)?;
    let sources = cfg.inputs.iter().map(|p| open(p)).collect::<Result<Vec<_>>>()?;
    let mut cases = Vec::new();
    for (input, source) in cfg.inputs.iter().zip(&sources) {
        let id = video_id(input);
        let annotations = truth.get(&id).with_context(|| format!("no annotations for video {id}"))?.clone();
        cases.push(CalibrationCase {
            source: &**source,
            labelings: detector.label_segments(&**source)?,
            annotations,
        });
    }
    let cal = calibrate_threshold(&cases, &cfg.detector.post, &cfg.grid)?;
    info!("calibrate: threshold {} (gradual F {:.3})", cal.threshold, cal.gradual_f);
    write_json(&global.out.join("calibration.json"), &cal)?;
    println!("{}", cal.threshold);
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalCfg {
    detections: Option<PathBuf>,
    annotations: Option<PathBuf>,
    policy: MatchPolicy,
    averaging: Averaging,
}

fn eval(global: &Global, cfg: EvalCfg) -> Result<()> {
    let dets = read_documents(required(&cfg.detections, "detections")?)?;
    let truth = read_documents(required(&cfg.annotations, "annotations")?)?;
    let mut pairs = Vec::new();
    for (id, d) in dets {
        let a = truth.get(&id).with_context(|| format!("no annotations for video {id}"))?;
        pairs.push((d, a.clone()));
    }
    let report = evaluate_corpus(&pairs, cfg.policy, cfg.averaging)?;
    write_json(&global.out.join("eval.json"), &report)?;
    let table = report.to_table();
    fs::write(global.out.join("eval.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct BenchCfg {
    checkpoint: Option<PathBuf>,
    svm: Option<PathBuf>,
    input: Option<PathBuf>,
    /// Network used when no checkpoint is given.
    network: C3dSbdConfig,
    /// Length of the procedural source used when no input is given.
    frames: usize,
    bench: BenchConfig,
    detector: DetectorConfig,
}

impl Default for BenchCfg {
    fn default() -> Self {
        Self {
            checkpoint: None,
            svm: None,
            input: None,
            network: bench_network(),
            frames: 1608,
            bench: BenchConfig {
                max_segments: Some(200),
                ..BenchConfig::default()
            },
            detector: DetectorConfig::default(),
        }
    }
}

/// Narrow convolutions with full-width fc layers: small enough for a CPU
/// sweep while keeping the fc weight traffic that batching amortizes.
pub fn bench_network() -> C3dSbdConfig {
    C3dSbdConfig::reduced([8, 16, 32, 32, 16], [2048, 2048])
}

fn bench(global: &Global, cfg: BenchCfg) -> Result<()> {
    let detector = match &cfg.checkpoint {
        Some(p) => load_detector(p, cfg.svm.as_ref(), cfg.detector.clone())?,
        None => Detector::new(C3dSbd::new(cfg.network.clone(), global.seed)?, Labeler::Softmax, cfg.detector.clone())?,
    };
    let source: Box<dyn FrameSource> = match &cfg.input {
        Some(p) => open(p)?,
        None => {
            let plan = VideoPlan {
                shots: cfg.frames.div_ceil(40),
                shot_len: (40, 40),
                ..VideoPlan::default()
            };
            let (mut frames, _) = compose_video(global.seed, "bench", &plan);
            frames.truncate(cfg.frames);
            Box::new(MemorySource::new("procedural:bench", frames)?)
        }
    };
    let report = benchmark(&detector, &*source, &cfg.bench)?;
    write_json(&global.out.join("bench.json"), &report)?;
    let table = report.to_table();
    fs::write(global.out.join("bench.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ExportCfg {
    inputs: Vec<PathBuf>,
    detections: Option<PathBuf>,
    ingest: sbd_core::IngestPolicy,
}

fn bootstrap_export(global: &Global, cfg: ExportCfg) -> Result<()> {
    ensure!(!cfg.inputs.is_empty(), "missing --input");
    let dets = read_documents(required(&cfg.detections, "detections")?)?;
    let sources = cfg.inputs.iter().map(|p| open(p)).collect::<Result<Vec<_>>>()?;
    let events: Vec<Vec<TransitionEvent>> = cfg
        .inputs
        .iter()
        .map(|p| {
            let id = video_id(p);
            dets.get(&id).map(|d| d.events.clone()).with_context(|| format!("no detections for video {id}"))
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<(&dyn FrameSource, &[TransitionEvent])> = sources.iter().zip(&events).map(|(s, e)| (&**s, e.as_slice())).collect();
    let dir = global.out.join("bootstrap");
    let pkg = export_bootstrap_candidates(&inputs, &dir, cfg.ingest)?;
    info!("bootstrap: exported {} candidate clips to {}", pkg.items.len(), dir.display());
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ImportCfg {
    package: Option<PathBuf>,
}

fn bootstrap_import(_global: &Global, cfg: ImportCfg) -> Result<()> {
    let dir = required(&cfg.package, "package")?;
    let manifest = import_bootstrap_labels(dir)?;
    info!("bootstrap: imported {} labeled segments into {}", manifest.len(), dir.join("manifest.jsonl").display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct HeatmapCfg {
    checkpoint: Option<PathBuf>,
    input: Option<PathBuf>,
    start: usize,
    scale: usize,
    ingest: sbd_core::IngestPolicy,
}

impl Default for HeatmapCfg {
    fn default() -> Self {
        Self {
            checkpoint: None,
            input: None,
            start: 0,
            scale: 4,
            ingest: sbd_core::IngestPolicy::default(),
        }
    }
}

fn heatmap(global: &Global, cfg: HeatmapCfg) -> Result<()> {
    let ck = Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let source = open(required(&cfg.input, "input")?)?;
    let segment = segment_at(&*source, cfg.start, cfg.ingest)?;
    let map = filter_heatmap(&segment, &ck.model, cfg.scale)?;
    fs::create_dir_all(&global.out)?;
    let png = global.out.join("heatmap.png");
    map.write_png(&png)?;
    let roughness = temporal_roughness(&map);
    write_json(
        &global.out.join("heatmap.json"),
        &serde_json::json!({"start": cfg.start, "filters": map.blocks.len(), "temporal_roughness": roughness}),
    )?;
    info!("heatmap: {} (temporal roughness {roughness:.4})", png.display());
    Ok(())
}

fn desk(global: &Global, mut cfg: DeskConfig) -> Result<()> {
    cfg.seed = global.seed;
    let report = run_desk(&cfg, &global.out)?;
    print!("{}", report.eval.to_table());
    info!("desk: finished in {:.1}s", report.seconds.total);
    Ok(())
}
