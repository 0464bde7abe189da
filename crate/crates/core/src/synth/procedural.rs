//! Procedurally generated footage.
//!
//! Shots are textured, panning backgrounds with moving objects, lighting drift
//! and sensor noise. They stand in for source material when no licensed video
//! is at hand, and [`compose_video`] joins them with cuts, dissolves and wipes
//! to produce held-out test videos with exact ground truth.

use image::{Rgb, RgbImage};
use ndarray::ArrayView3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frames::Frame;
use crate::synth::alpha::{composite, Alpha};
use crate::synth::wipe::{WipeFamily, WipeMatte};
use crate::types::{EventDocument, TransitionEvent, TransitionLabel};

#[derive(Clone, Debug)]
struct Blob {
    color: [f32; 3],
    radius: f32,
    pos: (f32, f32),
    vel: (f32, f32),
    square: bool,
}

/// Random appearance and motion parameters of one shot.
#[derive(Clone, Debug)]
pub struct ShotStyle {
    base: [f32; 3],
    accent: [f32; 3],
    gradient_dir: (f32, f32),
    wave: (f32, f32, f32),
    wave_amp: f32,
    pan: (f32, f32),
    blobs: Vec<Blob>,
    flicker: (f32, f32),
    noise: f32,
    seed: u64,
}

fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]
}

impl ShotStyle {
    pub fn random<R: Rng>(rng: &mut R, width: u32, height: u32) -> Self {
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let fast = rng.random_bool(0.25);
        let pan_speed = if fast { rng.random_range(2.0..6.0) } else { rng.random_range(0.0..1.5) };
        let pan_angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let blobs = (0..rng.random_range(2..6))
            .map(|_| Blob {
                color: random_color(rng),
                radius: rng.random_range(6.0..(height as f32 / 4.0).max(7.0)),
                pos: (rng.random_range(0.0..width as f32), rng.random_range(0.0..height as f32)),
                vel: (
                    rng.random_range(-3.0..3.0) * if fast { 2.0 } else { 1.0 },
                    rng.random_range(-3.0..3.0) * if fast { 2.0 } else { 1.0 },
                ),
                square: rng.random_bool(0.5),
            })
            .collect();
        Self {
            base: random_color(rng),
            accent: random_color(rng),
            gradient_dir: (angle.cos(), angle.sin()),
            wave: (
                rng.random_range(0.02..0.25),
                rng.random_range(0.02..0.25),
                rng.random_range(0.0..std::f32::consts::TAU),
            ),
            wave_amp: rng.random_range(5.0..40.0),
            pan: (pan_speed * pan_angle.cos(), pan_speed * pan_angle.sin()),
            blobs,
            flicker: (rng.random_range(0.0..0.12), rng.random_range(0.02..0.15)),
            noise: rng.random_range(0.0..6.0),
            seed: rng.random(),
        }
    }

    /// Renders frame `t` of the shot.
    pub fn render(&self, t: usize, width: u32, height: u32) -> Frame {
        let tf = t as f32;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let gain = 1.0 + self.flicker.0 * (self.flicker.1 * tf).sin();
        let (w, h) = (width as f32, height as f32);
        let blobs: Vec<(f32, f32, &Blob)> = self
            .blobs
            .iter()
            .map(|b| {
                let bounce = |p: f32, v: f32, n: f32| {
                    let period = 2.0 * n;
                    let x = (p + v * tf).rem_euclid(period);
                    if x > n { period - x } else { x }
                };
                (bounce(b.pos.0, b.vel.0, w), bounce(b.pos.1, b.vel.1, h), b)
            })
            .collect();
        let mut img = RgbImage::new(width, height);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let sx = x as f32 + self.pan.0 * tf;
            let sy = y as f32 + self.pan.1 * tf;
            let g = ((sx * self.gradient_dir.0 + sy * self.gradient_dir.1) / (w + h)).rem_euclid(1.0);
            let wave = (self.wave.0 * sx + self.wave.1 * sy + self.wave.2).sin() * self.wave_amp;
            let mut c = [0f32; 3];
            for k in 0..3 {
                c[k] = self.base[k] * (1.0 - g) + self.accent[k] * g + wave;
            }
            for &(bx, by, b) in &blobs {
                let (dx, dy) = (x as f32 - bx, y as f32 - by);
                let inside = if b.square {
                    dx.abs() < b.radius && dy.abs() < b.radius
                } else {
                    dx * dx + dy * dy < b.radius * b.radius
                };
                if inside {
                    c = b.color;
                }
            }
            let mut out = [0u8; 3];
            for k in 0..3 {
                let n = if self.noise > 0.0 { noise_rng.random_range(-self.noise..=self.noise) } else { 0.0 };
                out[k] = (c[k] * gain + n).round().clamp(0.0, 255.0) as u8;
            }
            *px = Rgb(out);
        }
        img
    }

    pub fn render_range(&self, frames: std::ops::Range<usize>, width: u32, height: u32) -> Vec<Frame> {
        frames.map(|t| self.render(t, width, height)).collect()
    }
}

/// Parameters for procedurally generated clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Number of shots joined by cuts.
    pub shots: usize,
}

impl Default for ClipPlan {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            frames: 240,
            shots: 2,
        }
    }
}

/// A clip made of `plan.shots` shots separated by annotated hard cuts.
pub fn generate_clip(seed: u64, plan: &ClipPlan) -> (Vec<Frame>, Vec<TransitionEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shots = plan.shots.max(1);
    let mut frames = Vec::with_capacity(plan.frames);
    let mut events = Vec::new();
    let base_len = plan.frames / shots;
    for s in 0..shots {
        let len = if s + 1 == shots { plan.frames - frames.len() } else { base_len };
        let style = ShotStyle::random(&mut rng, plan.width, plan.height);
        if s > 0 {
            events.push(TransitionEvent::cut(frames.len()));
        }
        frames.extend(style.render_range(0..len, plan.width, plan.height));
    }
    (frames, events)
}

/// Mix of transition kinds and lengths in a composed test video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPlan {
    pub width: u32,
    pub height: u32,
    pub shots: usize,
    pub shot_len: (usize, usize),
    /// Relative weights of sharp, gradual and wipe transitions.
    pub weights: (f64, f64, f64),
    /// Inclusive range of gradual/wipe durations in frames.
    pub gradual_len: (usize, usize),
}

impl Default for VideoPlan {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            shots: 8,
            shot_len: (40, 70),
            weights: (1.0, 1.0, 0.0),
            gradual_len: (4, 12),
        }
    }
}

fn frame_array(frame: &Frame) -> ArrayView3<'_, u8> {
    crate::window::frame_view(frame)
}

/// Joins `plan.shots` random shots with random transitions. Gradual and wipe
/// transitions use a linear ramp `1 - k/(N+1)`; ground truth spans the frames
/// whose alpha is strictly between 0 and 1, and a cut spans its frame pair.
pub fn compose_video(seed: u64, video_id: &str, plan: &VideoPlan) -> (Vec<Frame>, EventDocument) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (plan.width, plan.height);
    let mut frames: Vec<Frame> = Vec::new();
    let mut events = Vec::new();
    let total = plan.weights.0 + plan.weights.1 + plan.weights.2;
    let mut prev = ShotStyle::random(&mut rng, w, h);
    let first_len = rng.random_range(plan.shot_len.0..=plan.shot_len.1);
    frames.extend(prev.render_range(0..first_len, w, h));
    let mut prev_t = first_len;
    for _ in 1..plan.shots.max(1) {
        let next = ShotStyle::random(&mut rng, w, h);
        let len = rng.random_range(plan.shot_len.0..=plan.shot_len.1);
        let pick = rng.random_range(0.0..total);
        let label = if pick < plan.weights.0 {
            TransitionLabel::Sharp
        } else if pick < plan.weights.0 + plan.weights.1 {
            TransitionLabel::Gradual
        } else {
            TransitionLabel::Wipe
        };
        let rendered = match label {
            TransitionLabel::Sharp => {
                events.push(TransitionEvent::cut(frames.len()));
                frames.extend(next.render_range(0..len, w, h));
                len
            }
            _ => {
                let n = rng.random_range(plan.gradual_len.0..=plan.gradual_len.1);
                let matte = (label == TransitionLabel::Wipe).then(|| {
                    let family = WipeFamily::ALL[rng.random_range(0..WipeFamily::ALL.len())];
                    WipeMatte::sample(family, &mut rng)
                });
                let start = frames.len();
                for k in 0..n {
                    let b = prev.render(prev_t + k, w, h);
                    let f = next.render(k, w, h);
                    let phase = (k + 1) as f64 / (n + 1) as f64;
                    let alpha = match &matte {
                        Some(m) => Alpha::Matte(m.render(phase, h as usize, w as usize)),
                        None => Alpha::Scalar((1.0 - phase) as f32),
                    };
                    let mixed = composite(frame_array(&b), frame_array(&f), &alpha).expect("same-size frames");
                    frames.push(RgbImage::from_raw(w, h, mixed.into_raw_vec_and_offset().0).expect("frame size"));
                }
                events.push(TransitionEvent::new(label, start, start + n - 1, 1.0));
                frames.extend(next.render_range(n..len.max(n + 1), w, h));
                len.max(n + 1)
            }
        };
        prev = next;
        prev_t = rendered;
    }
    (frames, EventDocument::new(video_id, events))
}

/// A constant-colour still, handy for degenerate cases.
pub fn still(width: u32, height: u32, color: [u8; 3], frames: usize) -> Vec<Frame> {
    vec![RgbImage::from_pixel(width, height, Rgb(color)); frames]
}

/// Mean absolute difference between consecutive frames; a crude motion gauge.
pub fn mean_motion(frames: &[Frame]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let diffs: Vec<f64> = frames
        .windows(2)
        .map(|p| {
            let (a, b) = (p[0].as_raw(), p[1].as_raw());
            a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / b.len() as f64
        })
        .collect();
    diffs.iter().sum::<f64>() / diffs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic_and_annotated() {
        let plan = ClipPlan {
            width: 64,
            height: 48,
            frames: 90,
            shots: 3,
        };
        let (a, ev) = generate_clip(4, &plan);
        let (b, _) = generate_clip(4, &plan);
        assert_eq!(a.len(), 90);
        assert_eq!(a, b);
        assert_eq!(ev, vec![TransitionEvent::cut(30), TransitionEvent::cut(60)]);
    }

    #[test]
    fn composed_video_ground_truth() {
        let plan = VideoPlan {
            width: 48,
            height: 32,
            shots: 6,
            weights: (1.0, 1.0, 1.0),
            ..VideoPlan::default()
        };
        let (frames, doc) = compose_video(9, "v", &plan);
        assert_eq!(doc.events.len(), 5);
        for e in &doc.events {
            assert!(e.validate().is_ok());
            assert!(e.end_frame < frames.len());
            if e.label == TransitionLabel::Sharp {
                assert_eq!(e.end_frame, e.start_frame + 1);
            }
        }
        assert!(doc.events.windows(2).all(|p| p[0].end_frame < p[1].start_frame));
    }

    #[test]
    fn shots_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let style = ShotStyle::random(&mut rng, 64, 48);
        let frames = style.render_range(0..8, 64, 48);
        assert!(mean_motion(&frames) > 0.0);
        assert_eq!(mean_motion(&still(4, 4, [1, 2, 3], 5)), 0.0);
    }
}
