//! Parametric wipe mattes.
//!
//! Each family defines a scalar "progress field" over the frame. A matte at
//! phase `p` is a soft threshold of that field, `clamp((g - c) / s + 1/2)`,
//! where the threshold `c` is solved for so that the matte's mean alpha is
//! exactly `1 - p`. Pixels with a low field value switch to the next shot
//! first.

use std::f32::consts::TAU;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::alpha::{Alpha, AlphaSchedule, ScheduleDescriptor, ScheduleKind};
use crate::types::{FRAME_SIDE, SEGMENT_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WipeFamily {
    LeftRight,
    RightLeft,
    TopBottom,
    BottomTop,
    Diagonal,
    IrisIn,
    IrisOut,
    VerticalBars,
    HorizontalBars,
    Checker,
}

impl WipeFamily {
    pub const ALL: [WipeFamily; 10] = [
        WipeFamily::LeftRight,
        WipeFamily::RightLeft,
        WipeFamily::TopBottom,
        WipeFamily::BottomTop,
        WipeFamily::Diagonal,
        WipeFamily::IrisIn,
        WipeFamily::IrisOut,
        WipeFamily::VerticalBars,
        WipeFamily::HorizontalBars,
        WipeFamily::Checker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WipeFamily::LeftRight => "left-right",
            WipeFamily::RightLeft => "right-left",
            WipeFamily::TopBottom => "top-bottom",
            WipeFamily::BottomTop => "bottom-top",
            WipeFamily::Diagonal => "diagonal",
            WipeFamily::IrisIn => "iris-in",
            WipeFamily::IrisOut => "iris-out",
            WipeFamily::VerticalBars => "vertical-bars",
            WipeFamily::HorizontalBars => "horizontal-bars",
            WipeFamily::Checker => "checker",
        }
    }
}

impl fmt::Display for WipeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WipeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WipeFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::WipeFamily(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WipeParams {
    /// Sweep direction in radians (diagonal family).
    pub angle: f32,
    /// Number of bars or checker cells per side.
    pub bands: u32,
    /// Width of the soft edge, as a fraction of the field range.
    pub softness: f32,
}

impl Default for WipeParams {
    fn default() -> Self {
        Self {
            angle: std::f32::consts::FRAC_PI_4,
            bands: 4,
            softness: 0.05,
        }
    }
}

/// A wipe family together with concrete parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WipeMatte {
    pub family: WipeFamily,
    pub params: WipeParams,
}

const MIN_SOFTNESS: f32 = 0.01;

impl WipeMatte {
    pub fn new(family: WipeFamily, params: WipeParams) -> Self {
        Self { family, params }
    }

    /// Random parameters for `family`.
    pub fn sample<R: Rng + ?Sized>(family: WipeFamily, rng: &mut R) -> Self {
        let angle = rng.random_range(0.0..TAU);
        let bands = rng.random_range(2..=8);
        let softness = rng.random_range(0.02..0.15);
        Self::new(family, WipeParams { angle, bands, softness })
    }

    pub fn id(&self) -> String {
        let p = &self.params;
        match self.family {
            WipeFamily::Diagonal => format!("{}/a{:.3}/s{:.3}", self.family, p.angle, p.softness),
            WipeFamily::VerticalBars | WipeFamily::HorizontalBars | WipeFamily::Checker => {
                format!("{}/b{}/s{:.3}", self.family, p.bands, p.softness)
            }
            _ => format!("{}/s{:.3}", self.family, p.softness),
        }
    }

    /// Progress field normalized to `[0, 1]`, shape `(height, width)`.
    pub fn field(&self, height: usize, width: usize) -> Array2<f32> {
        let bands = self.params.bands.max(1) as f32;
        let (sin, cos) = self.params.angle.sin_cos();
        let norm = |v: usize, n: usize| if n > 1 { v as f32 / (n - 1) as f32 } else { 0.5 };
        let raw = Array2::from_shape_fn((height, width), |(y, x)| {
            let (u, v) = (norm(x, width), norm(y, height));
            let dist = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            match self.family {
                WipeFamily::LeftRight => u,
                WipeFamily::RightLeft => 1.0 - u,
                WipeFamily::TopBottom => v,
                WipeFamily::BottomTop => 1.0 - v,
                WipeFamily::Diagonal => u * cos + v * sin,
                WipeFamily::IrisOut => dist,
                WipeFamily::IrisIn => -dist,
                WipeFamily::VerticalBars => (u * bands).fract(),
                WipeFamily::HorizontalBars => (v * bands).fract(),
                WipeFamily::Checker => {
                    let cell = ((u * bands).floor() + (v * bands).floor()) as i64 % 2;
                    (cell as f32 + (u * bands).fract()) / 2.0
                }
            }
        });
        let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(f32::EPSILON);
        raw.mapv(|g| (g - lo) / span)
    }

    /// Matte at `phase` in `[0, 1]`: all ones at 0, all zeros at 1, and mean
    /// alpha equal to `1 - phase` in between.
    pub fn render(&self, phase: f64, height: usize, width: usize) -> Array2<f32> {
        let phase = phase.clamp(0.0, 1.0);
        if phase == 0.0 {
            return Array2::ones((height, width));
        }
        if phase == 1.0 {
            return Array2::zeros((height, width));
        }
        let field = self.field(height, width);
        let soft = self.params.softness.max(MIN_SOFTNESS) as f64;
        let ramp = |g: f32, c: f64| ((g as f64 - c) / soft + 0.5).clamp(0.0, 1.0);
        let mean_at = |c: f64| field.iter().map(|&g| ramp(g, c)).sum::<f64>() / field.len() as f64;
        let target = 1.0 - phase;
        // mean_at is continuous and non-increasing in c.
        let (mut lo, mut hi) = (-soft, 1.0 + soft);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        field.mapv(|g| ramp(g, c) as f32)
    }
}

/// A deterministic catalogue of `count` distinct mattes cycling through all
/// families.
pub fn wipe_catalog<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<WipeMatte> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count {
        let matte = WipeMatte::sample(WipeFamily::ALL[i % WipeFamily::ALL.len()], rng);
        if seen.insert(matte.id()) {
            out.push(matte);
            i += 1;
        }
    }
    out
}

/// Wipe of `n` frames at phases `k / (n + 1)`, `k = 1..=n`, placed uniformly at
/// random inside the 16-frame window.
pub fn render_wipe_schedule<R: Rng + ?Sized>(matte: &WipeMatte, n: usize, rng: &mut R) -> Result<AlphaSchedule> {
    if !(2..=SEGMENT_LEN).contains(&n) {
        return Err(Error::Duration(n));
    }
    let offset = rng.random_range(0..=SEGMENT_LEN - n);
    let values = (0..SEGMENT_LEN)
        .map(|t| {
            if t < offset {
                Alpha::Scalar(1.0)
            } else if t >= offset + n {
                Alpha::Scalar(0.0)
            } else {
                let phase = (t - offset + 1) as f64 / (n + 1) as f64;
                Alpha::Matte(matte.render(phase, FRAME_SIDE, FRAME_SIDE))
            }
        })
        .collect();
    Ok(AlphaSchedule {
        kind: ScheduleKind::Wipe,
        values,
        duration: n,
        descriptor: ScheduleDescriptor {
            kind: ScheduleKind::Wipe,
            duration: n,
            offset,
            values: None,
            wipe: Some(*matte),
            fade: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean(m: &Array2<f32>) -> f64 {
        m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64
    }

    #[test]
    fn left_right_half_way() {
        let w = WipeMatte::new(WipeFamily::LeftRight, WipeParams::default());
        let m = w.render(0.5, 112, 112);
        // Integrate each half numerically.
        let left: f64 = m.slice(ndarray::s![.., ..56]).iter().map(|&v| v as f64).sum::<f64>() / (112.0 * 56.0);
        let right: f64 = m.slice(ndarray::s![.., 56..]).iter().map(|&v| v as f64).sum::<f64>() / (112.0 * 56.0);
        assert!(left < 0.05, "left mean {left}");
        assert!(right > 0.95, "right mean {right}");
        assert!((mean(&m) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn endpoints() {
        for family in WipeFamily::ALL {
            let w = WipeMatte::new(family, WipeParams::default());
            assert!(w.render(0.0, 112, 112).iter().all(|&v| v == 1.0));
            assert!(w.render(1.0, 112, 112).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn every_family_hits_target_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for w in wipe_catalog(40, &mut rng) {
            for k in 1..10 {
                let p = k as f64 / 10.0;
                let m = w.render(p, 112, 112);
                assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!((mean(&m) - (1.0 - p)).abs() <= 0.05, "{} at {p}: {}", w.id(), mean(&m));
            }
        }
    }

    #[test]
    fn unknown_family_is_an_error() {
        assert!(matches!("star".parse::<WipeFamily>(), Err(Error::WipeFamily(_))));
        assert_eq!("iris-in".parse::<WipeFamily>().unwrap(), WipeFamily::IrisIn);
    }

    #[test]
    fn schedule_means_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = WipeMatte::sample(WipeFamily::Checker, &mut rng);
        let s = render_wipe_schedule(&w, 6, &mut rng).unwrap();
        assert!(s.check().is_ok(), "{:?}", s.check());
        let means = s.means();
        let o = s.descriptor.offset;
        assert!(means[o..o + 6].windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn catalogue_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cat = wipe_catalog(196, &mut rng);
        let ids: std::collections::HashSet<_> = cat.iter().map(WipeMatte::id).collect();
        assert_eq!(ids.len(), 196);
    }
}
