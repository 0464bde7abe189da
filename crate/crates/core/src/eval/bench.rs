//! Batch-size throughput sweep of the detector.

use std::fmt::Write as _;
use std::fs;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::pipeline::{merge_labelings, postprocess, Detector, SegmentLabeling};
use crate::types::{SegmentSample, SEGMENT_LEN};
use crate::window::{segment_starts, Windower};

/// What the timed region of a run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Network, labeler and merging; frame decoding and resizing are done
    /// outside the clock.
    ModelOnly,
    /// Decoding, windowing, network, labeler, merging and post-processing.
    EndToEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub modes: Vec<TimingMode>,
    /// Process at most this many segments per run (whole source if unset).
    pub max_segments: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: std::iter::once(1).chain((1..=10).map(|k| 10 * k)).collect(),
            repetitions: 2,
            modes: vec![TimingMode::ModelOnly, TimingMode::EndToEnd],
            max_segments: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed { reason: String },
}

/// One timed run at one batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub mode: TimingMode,
    pub batch_size: usize,
    pub repetition: usize,
    pub status: CellStatus,
    /// Unix time in seconds at the start and end of the run.
    pub started_at: f64,
    pub ended_at: f64,
    pub wall_seconds: f64,
    pub iterations: usize,
    pub segments: usize,
    pub frames: usize,
    /// Video duration divided by wall time; 0 for failed cells.
    pub realtime_factor: f64,
    pub seconds_per_frame: f64,
    /// Resident-set high-water mark during the run, in KiB.
    pub peak_memory_kib: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub source: String,
    pub fps: f64,
    pub source_frames: usize,
    pub threads: usize,
    pub batch_sizes: Vec<usize>,
    pub cells: Vec<BenchCell>,
}

impl ThroughputReport {
    /// Mean seconds per frame over the completed repetitions of a cell.
    pub fn mean_seconds_per_frame(&self, mode: TimingMode, batch_size: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.mode == mode && c.batch_size == batch_size && c.status == CellStatus::Completed)
            .map(|c| c.seconds_per_frame)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "source: {} ({} frames at {:.3} fps), threads: {}",
            self.source, self.source_frames, self.fps, self.threads
        );
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>3} {:>16} {:>16} {:>9} {:>11} {:>6} {:>7} {:>9}  status",
            "mode", "batch", "rep", "start", "end", "seconds", "memory_kib", "iters", "frames", "realtime"
        );
        for c in &self.cells {
            let mode = match c.mode {
                TimingMode::ModelOnly => "model",
                TimingMode::EndToEnd => "end2end",
            };
            let status = match &c.status {
                CellStatus::Completed => "ok".to_string(),
                CellStatus::Failed { reason } => format!("failed: {reason}"),
            };
            let mem = c.peak_memory_kib.map_or("-".to_string(), |m| m.to_string());
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:>3} {:>16.3} {:>16.3} {:>9.3} {:>11} {:>6} {:>7} {:>9.3}  {}",
                mode, c.batch_size, c.repetition, c.started_at, c.ended_at, c.wall_seconds, mem, c.iterations, c.frames, c.realtime_factor, status
            );
        }
        out
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn proc_kib(file: &str, key: &str) -> Option<u64> {
    let text = fs::read_to_string(file).ok()?;
    let line = text.lines().find(|l| l.starts_with(key))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Resets the kernel's peak-RSS counter for this process.
fn reset_peak_rss() -> bool {
    fs::write("/proc/self/clear_refs", "5").is_ok()
}

fn peak_rss_kib() -> Option<u64> {
    proc_kib("/proc/self/status", "VmHWM:")
}

/// Rough working-set estimate for one forward pass: input, every recorded
/// activation, and the largest unfolded convolution input, in bytes.
fn forward_bytes(detector: &Detector, batch: usize) -> Result<u64> {
    let table = detector.model.shape_table(batch)?;
    let elems: usize = table.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    let cfg = detector.model.config();
    let mut unfold = 0usize;
    let mut depth = 3;
    for (l, shape) in table.iter().filter(|l| l.name.starts_with("conv")).enumerate() {
        let out_vol: usize = shape.shape[2..].iter().product();
        unfold = unfold.max(depth * 27 * out_vol);
        depth = cfg.filters[l];
    }
    // im2col buffers are per sample but may be live on every worker.
    let workers = rayon::current_num_threads().min(batch);
    Ok(4 * (elems + unfold * workers) as u64)
}

fn segments_for(source: &dyn FrameSource, cfg: &BenchConfig) -> usize {
    let all = segment_starts(source.frame_count()).len();
    cfg.max_segments.map_or(all, |m| m.min(all))
}

fn covered_frames(source: &dyn FrameSource, segments: usize) -> usize {
    if segments == 0 {
        return 0;
    }
    let last_start = segment_starts(source.frame_count())[segments - 1];
    (last_start + SEGMENT_LEN).min(source.frame_count())
}

/// Times the detector over a batch-size sweep. Cells that would not fit in
/// available memory are recorded as failed and the sweep continues.
pub fn benchmark(detector: &Detector, source: &dyn FrameSource, cfg: &BenchConfig) -> Result<ThroughputReport> {
    let mut report = ThroughputReport {
        source: source.uri().to_string(),
        fps: source.fps().as_f64(),
        source_frames: source.frame_count(),
        threads: rayon::current_num_threads(),
        batch_sizes: cfg.batch_sizes.clone(),
        cells: Vec::new(),
    };
    if cfg.batch_sizes.is_empty() {
        return Ok(report);
    }
    let segments = segments_for(source, cfg);
    let max_batch = *cfg.batch_sizes.iter().max().expect("non-empty");
    if max_batch == 0 || segments < max_batch {
        return Err(Error::Config(format!(
            "benchmark needs at least {max_batch} segments (about {} frames), source provides {segments}",
            8 * max_batch + 8
        )));
    }
    let frames = covered_frames(source, segments);
    for &mode in &cfg.modes {
        for &batch in &cfg.batch_sizes {
            for rep in 0..cfg.repetitions {
                log::info!("bench {mode:?} batch {batch} repetition {rep}");
                let cell = run_cell(detector, source, mode, batch, rep, segments, frames)?;
                report.cells.push(cell);
            }
        }
    }
    Ok(report)
}

fn run_cell(detector: &Detector, source: &dyn FrameSource, mode: TimingMode, batch: usize, rep: usize, segments: usize, frames: usize) -> Result<BenchCell> {
    let mut cell = BenchCell {
        mode,
        batch_size: batch,
        repetition: rep,
        status: CellStatus::Completed,
        started_at: unix_now(),
        ended_at: 0.0,
        wall_seconds: 0.0,
        iterations: segments.div_ceil(batch),
        segments,
        frames,
        realtime_factor: 0.0,
        seconds_per_frame: 0.0,
        peak_memory_kib: None,
    };
    let need = forward_bytes(detector, batch)? + 2 * (batch * SEGMENT_LEN * 112 * 112 * 3) as u64;
    if let Some(avail) = proc_kib("/proc/meminfo", "MemAvailable:") {
        if need > avail * 1024 {
            cell.status = CellStatus::Failed {
                reason: format!("out of memory: needs about {} MiB, {} MiB available", need >> 20, avail >> 10),
            };
            cell.ended_at = cell.started_at;
            return Ok(cell);
        }
    }
    let tracked = reset_peak_rss();
    let seconds = match mode {
        TimingMode::ModelOnly => {
            let mut windows = Windower::new(source, detector.config.ingest);
            let mut labelings: Vec<SegmentLabeling> = Vec::with_capacity(segments);
            let mut timed = 0.0;
            while labelings.len() < segments {
                let take = batch.min(segments - labelings.len());
                let chunk: Vec<SegmentSample> = windows.by_ref().take(take).collect::<Result<_>>()?;
                let t0 = Instant::now();
                let labels = detector.label_batch(chunk.iter().map(|s| &s.frames))?;
                timed += t0.elapsed().as_secs_f64();
                for (s, (label, score)) in chunk.iter().zip(labels) {
                    labelings.push(SegmentLabeling {
                        index: labelings.len(),
                        start_frame: s.start_frame,
                        label,
                        score,
                    });
                }
            }
            let t0 = Instant::now();
            merge_labelings(&labelings)?;
            timed + t0.elapsed().as_secs_f64()
        }
        TimingMode::EndToEnd => {
            let t0 = Instant::now();
            let mut windows = Windower::new(source, detector.config.ingest);
            let mut labelings: Vec<SegmentLabeling> = Vec::with_capacity(segments);
            while labelings.len() < segments {
                let take = batch.min(segments - labelings.len());
                let chunk: Vec<SegmentSample> = windows.by_ref().take(take).collect::<Result<_>>()?;
                let labels = detector.label_batch(chunk.iter().map(|s| &s.frames))?;
                for (s, (label, score)) in chunk.iter().zip(labels) {
                    labelings.push(SegmentLabeling {
                        index: labelings.len(),
                        start_frame: s.start_frame,
                        label,
                        score,
                    });
                }
            }
            postprocess(&labelings, source, &detector.config.post, detector.config.post_process)?;
            t0.elapsed().as_secs_f64()
        }
    };
    cell.ended_at = unix_now();
    cell.wall_seconds = seconds;
    cell.peak_memory_kib = if tracked { peak_rss_kib() } else { None };
    let video_seconds = frames as f64 / source.fps().as_f64();
    cell.realtime_factor = video_seconds / seconds.max(f64::MIN_POSITIVE);
    cell.seconds_per_frame = seconds / frames as f64;
    Ok(cell)
}
