//! `sbd`: synthesize transition datasets, train the detector, run and score
//! detections, and benchmark throughput.

mod commands;
mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{put, Global};

#[derive(Parser, Debug)]
#[command(name = "sbd", version, about = "Shot boundary detection toolkit")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render procedural source clips with cut annotations.
    Clips(ClipsFlags),
    /// Render composed test videos with ground-truth transitions.
    Videos(VideosFlags),
    /// Synthesize a labeled segment dataset from annotated sources.
    Synth(SynthFlags),
    /// Train the network (and the SVM on its fc8 features).
    Train(TrainFlags),
    /// Detect transitions in videos.
    Detect(DetectFlags),
    /// Pick the histogram threshold on annotated validation videos.
    Calibrate(CalibrateFlags),
    /// Score detections against annotations.
    Eval(EvalFlags),
    /// Throughput sweep over batch sizes.
    Bench(BenchFlags),
    /// Export gradual detections for review, or import reviewed labels.
    #[command(subcommand)]
    Bootstrap(BootstrapCommand),
    /// Render conv5 filter responses of one segment as a PNG.
    Heatmap(HeatmapFlags),
    /// Whole desk-scale workflow: clips, dataset, training, detection, scoring.
    Desk(DeskFlags),
}

#[derive(Subcommand, Debug)]
enum BootstrapCommand {
    Export(ExportFlags),
    Import(ImportFlags),
}

#[derive(Args, Debug)]
struct ClipsFlags {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    shots: Option<usize>,
}

#[derive(Args, Debug)]
struct VideosFlags {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    /// Include wipe transitions.
    #[arg(long)]
    wipes: bool,
}

#[derive(Args, Debug)]
struct SynthFlags {
    /// Directory of `.y4m` files or image directories, each optionally with
    /// a `<name>.json` annotation file.
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Dataset recipe as a `SynthSpec` JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Segments per class when no spec file is given.
    #[arg(long)]
    per_class: Option<usize>,
    /// Also synthesize this many wipe segments.
    #[arg(long)]
    wipes: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Five comma-separated convolution widths.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<usize>>,
    /// Two comma-separated fc widths.
    #[arg(long, value_delimiter = ',')]
    fc: Option<Vec<usize>>,
    /// batch_norm or lrn.
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    /// Skip fitting the SVM.
    #[arg(long)]
    no_svm: bool,
}

#[derive(Args, Debug)]
struct DetectFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// SVM model; without it segments are labeled by the softmax.
    #[arg(long)]
    svm: Option<PathBuf>,
    /// Video to process (repeatable).
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    no_postprocess: bool,
    /// Also write per-segment labels.
    #[arg(long)]
    dump_segments: bool,
}

#[derive(Args, Debug)]
struct CalibrateFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    svm: Option<PathBuf>,
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Directory of annotation files named by video id.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct EvalFlags {
    /// Detection file or directory.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Annotation file or directory.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// label_strict or combined.
    #[arg(long)]
    policy: Option<String>,
    /// per_transition or per_sequence.
    #[arg(long)]
    averaging: Option<String>,
}

#[derive(Args, Debug)]
struct BenchFlags {
    /// Trained checkpoint; a freshly initialized network otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    svm: Option<PathBuf>,
    /// Source video; a procedural one otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    max_segments: Option<usize>,
    /// Length of the procedural source.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct ExportFlags {
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Directory of detection files named by video id.
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImportFlags {
    #[arg(long)]
    package: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// First frame of the segment.
    #[arg(long)]
    start: Option<usize>,
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Args, Debug)]
struct DeskFlags {
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    test_videos: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// svm or softmax.
    #[arg(long)]
    labeler: Option<String>,
}

fn some_if(flag: bool) -> Option<bool> {
    flag.then_some(true)
}

fn nonempty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl Command {
    /// Configuration section name and the flag layer for it.
    fn layer(&self) -> (&'static str, Value) {
        let mut v = json!({});
        let name = match self {
            Command::Clips(f) => {
                put(&mut v, &["count"], &f.count);
                put(&mut v, &["plan", "frames"], &f.frames);
                put(&mut v, &["plan", "width"], &f.width);
                put(&mut v, &["plan", "height"], &f.height);
                put(&mut v, &["plan", "shots"], &f.shots);
                "clips"
            }
            Command::Videos(f) => {
                put(&mut v, &["count"], &f.count);
                put(&mut v, &["plan", "shots"], &f.shots);
                if f.wipes {
                    put(&mut v, &["plan", "weights"], &Some((1.0, 1.0, 1.0)));
                }
                "videos"
            }
            Command::Synth(f) => {
                put(&mut v, &["sources"], &f.sources);
                put(&mut v, &["spec_file"], &f.spec);
                put(&mut v, &["per_class"], &f.per_class);
                put(&mut v, &["wipes"], &f.wipes);
                "synth"
            }
            Command::Train(f) => {
                put(&mut v, &["manifest"], &f.manifest);
                put(&mut v, &["schedule", "epochs"], &f.epochs);
                put(&mut v, &["schedule", "batch_size"], &f.batch);
                put(&mut v, &["schedule", "momentum"], &f.momentum);
                put(&mut v, &["schedule", "base_lr"], &f.lr);
                put(&mut v, &["network", "filters"], &f.filters);
                put(&mut v, &["network", "fc"], &f.fc);
                put(&mut v, &["network", "norm"], &f.norm);
                put(&mut v, &["network", "num_classes"], &f.classes);
                put(&mut v, &["fit_svm"], &f.no_svm.then_some(false));
                "train"
            }
            Command::Detect(f) => {
                put(&mut v, &["checkpoint"], &f.checkpoint);
                put(&mut v, &["svm"], &f.svm);
                put(&mut v, &["inputs"], &nonempty(&f.inputs));
                put(&mut v, &["detector", "batch_size"], &f.batch);
                put(&mut v, &["detector", "post", "threshold"], &f.threshold);
                put(&mut v, &["detector", "post_process"], &f.no_postprocess.then_some(false));
                put(&mut v, &["dump_segments"], &some_if(f.dump_segments));
                "detect"
            }
            Command::Calibrate(f) => {
                put(&mut v, &["checkpoint"], &f.checkpoint);
                put(&mut v, &["svm"], &f.svm);
                put(&mut v, &["inputs"], &nonempty(&f.inputs));
                put(&mut v, &["annotations"], &f.annotations);
                put(&mut v, &["grid"], &f.grid);
                "calibrate"
            }
            Command::Eval(f) => {
                put(&mut v, &["detections"], &f.detections);
                put(&mut v, &["annotations"], &f.annotations);
                put(&mut v, &["policy"], &f.policy);
                put(&mut v, &["averaging"], &f.averaging);
                "eval"
            }
            Command::Bench(f) => {
                put(&mut v, &["checkpoint"], &f.checkpoint);
                put(&mut v, &["svm"], &f.svm);
                put(&mut v, &["input"], &f.input);
                put(&mut v, &["bench", "batch_sizes"], &f.batch_sizes);
                put(&mut v, &["bench", "repetitions"], &f.repetitions);
                put(&mut v, &["bench", "max_segments"], &f.max_segments);
                put(&mut v, &["frames"], &f.frames);
                "bench"
            }
            Command::Bootstrap(BootstrapCommand::Export(f)) => {
                put(&mut v, &["inputs"], &nonempty(&f.inputs));
                put(&mut v, &["detections"], &f.detections);
                "bootstrap_export"
            }
            Command::Bootstrap(BootstrapCommand::Import(f)) => {
                put(&mut v, &["package"], &f.package);
                "bootstrap_import"
            }
            Command::Heatmap(f) => {
                put(&mut v, &["checkpoint"], &f.checkpoint);
                put(&mut v, &["input"], &f.input);
                put(&mut v, &["start"], &f.start);
                put(&mut v, &["scale"], &f.scale);
                "heatmap"
            }
            Command::Desk(f) => {
                put(&mut v, &["per_class"], &f.per_class);
                put(&mut v, &["clips"], &f.clips);
                put(&mut v, &["test_videos"], &f.test_videos);
                put(&mut v, &["schedule", "epochs"], &f.epochs);
                put(&mut v, &["schedule", "base_lr"], &f.lr);
                put(&mut v, &["labeler"], &f.labeler);
                "desk"
            }
        };
        (name, v)
    }
}

fn run_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("{:012x}", (nanos as u64 ^ (std::process::id() as u64).rotate_left(40)) & 0xffff_ffff_ffff)
}

fn init_logging(run: &str) {
    let run = run.to_string();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(move |buf, record| {
            writeln!(
                buf,
                "{} {:<5} run={} {}: {}",
                buf.timestamp_millis(),
                record.level(),
                run,
                record.target(),
                record.args()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = run_id();
    init_logging(&run);
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli(cli: Cli) -> anyhow::Result<()> {
    let file = config::read_file(cli.config.as_deref())?;
    let mut flags = json!({});
    put(&mut flags, &["seed"], &cli.seed);
    put(&mut flags, &["workers"], &cli.workers);
    put(&mut flags, &["out"], &cli.out);
    let global: Global = config::resolve(&file, "", &flags)?;
    if global.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(global.workers).build_global()?;
    }
    log::info!(
        "seed={} workers={} out={}",
        global.seed,
        rayon::current_num_threads(),
        global.out.display()
    );
    let (section, layer) = cli.command.layer();
    commands::dispatch(&global, &file, section, &layer)
}
