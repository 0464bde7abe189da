//! Alpha schedules and the linear compositing model
//! `I_t(x) = a_t(x) B_t(x) + (1 - a_t(x)) F_t(x)`.

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis, Zip};
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::wipe::WipeMatte;
use crate::types::SEGMENT_LEN;

/// Mixing weight for one frame: a scalar, or a per-pixel matte.
#[derive(Clone, Debug, PartialEq)]
pub enum Alpha {
    Scalar(f32),
    Matte(Array2<f32>),
}

impl Alpha {
    pub fn mean(&self) -> f64 {
        match self {
            Alpha::Scalar(a) => *a as f64,
            Alpha::Matte(m) => m.iter().map(|&v| v as f64).sum::<f64>() / m.len() as f64,
        }
    }

    fn check_domain(&self) -> Result<()> {
        let bad = |v: f32| !(0.0..=1.0).contains(&v);
        match self {
            Alpha::Scalar(a) if bad(*a) => Err(Error::AlphaDomain(*a)),
            Alpha::Matte(m) => match m.iter().find(|&&v| bad(v)) {
                Some(&v) => Err(Error::AlphaDomain(v)),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    None,
    Sharp,
    Dissolve,
    Wipe,
}

/// Which side of a dissolve is black.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fade {
    /// From black into the next shot (`B` is black).
    In,
    /// From the previous shot to black (`F` is black).
    Out,
}

/// Serializable description of a schedule, enough to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    pub kind: ScheduleKind,
    /// Number of frames with fractional alpha (1 for a cut, 0 for none).
    pub duration: usize,
    /// First frame in the window whose alpha drops below 1.
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wipe: Option<WipeMatte>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fade: Option<Fade>,
}

impl ScheduleDescriptor {
    pub fn none() -> Self {
        Self {
            kind: ScheduleKind::None,
            duration: 0,
            offset: SEGMENT_LEN,
            values: None,
            wipe: None,
            fade: None,
        }
    }

    /// Short identifier recorded in segment origins.
    pub fn id(&self) -> String {
        let mut id = match self.kind {
            ScheduleKind::None => "none".to_string(),
            ScheduleKind::Sharp => format!("sharp@{}", self.offset),
            ScheduleKind::Dissolve => format!("dissolve/n{}@{}", self.duration, self.offset),
            ScheduleKind::Wipe => format!("wipe/n{}@{}", self.duration, self.offset),
        };
        if let Some(w) = &self.wipe {
            id.push(':');
            id.push_str(&w.id());
        }
        if let Some(f) = self.fade {
            id.push_str(match f {
                Fade::In => ":fade_in",
                Fade::Out => ":fade_out",
            });
        }
        id
    }
}

/// Per-frame mixing weights for a 16-frame window.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSchedule {
    pub kind: ScheduleKind,
    pub values: Vec<Alpha>,
    pub duration: usize,
    pub descriptor: ScheduleDescriptor,
}

impl AlphaSchedule {
    pub fn none() -> Self {
        Self {
            kind: ScheduleKind::None,
            values: vec![Alpha::Scalar(1.0); SEGMENT_LEN],
            duration: 0,
            descriptor: ScheduleDescriptor::none(),
        }
    }

    /// Scalar values, if this schedule has no spatial mattes.
    pub fn scalars(&self) -> Option<Vec<f32>> {
        self.values
            .iter()
            .map(|a| match a {
                Alpha::Scalar(v) => Some(*v),
                Alpha::Matte(_) => None,
            })
            .collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.values.iter().map(Alpha::mean).collect()
    }

    /// Checks the per-kind invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.values.len() != SEGMENT_LEN {
            return Err(format!("{} values, expected {SEGMENT_LEN}", self.values.len()));
        }
        for a in &self.values {
            a.check_domain().map_err(|e| e.to_string())?;
        }
        let means = self.means();
        if means.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("alpha means increase: {means:?}"));
        }
        match self.kind {
            ScheduleKind::None => {
                if means.iter().any(|&m| m != 1.0) {
                    return Err("no-transition schedule must be all ones".into());
                }
            }
            ScheduleKind::Sharp => {
                let s = self.scalars().ok_or("sharp schedule must be scalar")?;
                let b = s.iter().position(|&v| v == 0.0).ok_or("sharp schedule never reaches 0")?;
                if b == 0 || s[..b].iter().any(|&v| v != 1.0) || s[b..].iter().any(|&v| v != 0.0) {
                    return Err(format!("not a step schedule: {s:?}"));
                }
            }
            ScheduleKind::Dissolve => {
                let s = self.scalars().ok_or("dissolve schedule must be scalar")?;
                let interior = s.iter().filter(|&&v| v > 0.0 && v < 1.0).count();
                if interior != self.duration {
                    return Err(format!(
                        "{interior} interior values, expected {} in {s:?}",
                        self.duration
                    ));
                }
            }
            ScheduleKind::Wipe => {}
        }
        Ok(())
    }
}

/// Cut at `boundary_index`: alpha is 1 before it and 0 from it on.
pub fn make_sharp_schedule(boundary_index: usize) -> Result<AlphaSchedule> {
    if !(1..SEGMENT_LEN).contains(&boundary_index) {
        return Err(Error::Boundary(boundary_index));
    }
    let values: Vec<f32> = (0..SEGMENT_LEN)
        .map(|t| if t < boundary_index { 1.0 } else { 0.0 })
        .collect();
    Ok(AlphaSchedule {
        kind: ScheduleKind::Sharp,
        values: values.iter().map(|&v| Alpha::Scalar(v)).collect(),
        duration: 1,
        descriptor: ScheduleDescriptor {
            kind: ScheduleKind::Sharp,
            duration: 1,
            offset: boundary_index,
            values: Some(values),
            wipe: None,
            fade: None,
        },
    })
}

fn check_duration(n: usize) -> Result<()> {
    if !(2..=SEGMENT_LEN).contains(&n) {
        return Err(Error::Duration(n));
    }
    Ok(())
}

/// Dissolve of `n` frames: `n` draws from the open unit interval sorted in
/// descending order, placed uniformly at random inside the window, with ones
/// before and zeros after.
pub fn make_dissolve_schedule<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<AlphaSchedule> {
    check_duration(n)?;
    let mut draws: Vec<f32> = (0..n).map(|_| rng.sample(Open01)).collect();
    draws.sort_by(|a, b| b.total_cmp(a));
    let offset = rng.random_range(0..=SEGMENT_LEN - n);
    let mut values = vec![1.0f32; offset];
    values.extend_from_slice(&draws);
    values.resize(SEGMENT_LEN, 0.0);
    Ok(AlphaSchedule {
        kind: ScheduleKind::Dissolve,
        values: values.iter().map(|&v| Alpha::Scalar(v)).collect(),
        duration: n,
        descriptor: ScheduleDescriptor {
            kind: ScheduleKind::Dissolve,
            duration: n,
            offset,
            values: Some(values),
            wipe: None,
            fade: None,
        },
    })
}

/// Composites one frame: `round(a*B + (1-a)*F)` evaluated in `f64`.
pub fn composite(b: ArrayView3<'_, u8>, f: ArrayView3<'_, u8>, alpha: &Alpha) -> Result<Array3<u8>> {
    if b.dim() != f.dim() {
        return Err(Error::Shape(format!("B is {:?}, F is {:?}", b.dim(), f.dim())));
    }
    alpha.check_domain()?;
    let mix = |a: f32, bv: u8, fv: u8| -> u8 {
        let a = a as f64;
        (a * bv as f64 + (1.0 - a) * fv as f64).round() as u8
    };
    let mut out = Array3::<u8>::zeros(b.dim());
    match alpha {
        Alpha::Scalar(a) => {
            Zip::from(&mut out).and(&b).and(&f).for_each(|o, &bv, &fv| *o = mix(*a, bv, fv));
        }
        Alpha::Matte(m) => {
            let (h, w, _) = b.dim();
            if m.dim() != (h, w) {
                return Err(Error::Shape(format!("matte is {:?}, frame is {h}x{w}", m.dim())));
            }
            for ((y, x, c), o) in out.indexed_iter_mut() {
                *o = mix(m[[y, x]], b[[y, x, c]], f[[y, x, c]]);
            }
        }
    }
    Ok(out)
}

/// Composites a whole `(16, H, W, 3)` window under `schedule`.
pub fn composite_segment(b: &Array4<u8>, f: &Array4<u8>, schedule: &AlphaSchedule) -> Result<Array4<u8>> {
    if b.dim() != f.dim() || b.dim().0 != schedule.values.len() {
        return Err(Error::Shape(format!(
            "B {:?}, F {:?}, schedule of {}",
            b.dim(),
            f.dim(),
            schedule.values.len()
        )));
    }
    let mut out = Array4::<u8>::zeros(b.dim());
    for (t, alpha) in schedule.values.iter().enumerate() {
        let frame = composite(b.index_axis(Axis(0), t), f.index_axis(Axis(0), t), alpha)?;
        out.index_axis_mut(Axis(0), t).assign(&frame);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn px(v: u8) -> Array3<u8> {
        Array3::from_elem((2, 2, 3), v)
    }

    #[test]
    fn alpha_extremes_select_one_shot() {
        let b = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| (y * 40 + x * 9 + c) as u8);
        let f = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| (250 - y * 30 - x - c) as u8);
        assert_eq!(composite(b.view(), f.view(), &Alpha::Scalar(1.0)).unwrap(), b);
        assert_eq!(composite(b.view(), f.view(), &Alpha::Scalar(0.0)).unwrap(), f);
    }

    #[test]
    fn half_alpha_averages() {
        let out = composite(px(200).view(), px(100).view(), &Alpha::Scalar(0.5)).unwrap();
        assert!(out.iter().all(|&v| v == 150));
    }

    #[test]
    fn composite_errors() {
        let a = Array3::<u8>::zeros((2, 2, 3));
        let b = Array3::<u8>::zeros((2, 3, 3));
        assert!(matches!(composite(a.view(), b.view(), &Alpha::Scalar(0.5)), Err(Error::Shape(_))));
        assert!(matches!(
            composite(a.view(), a.view(), &Alpha::Scalar(1.5)),
            Err(Error::AlphaDomain(_))
        ));
        let matte = Array2::from_elem((2, 2), -0.1f32);
        assert!(composite(a.view(), a.view(), &Alpha::Matte(matte)).is_err());
    }

    #[test]
    fn fade_halves_intensity() {
        let live = Array3::from_shape_fn((3, 3, 3), |(y, x, c)| (y * 60 + x * 20 + c * 7 + 3) as u8);
        let black = Array3::<u8>::zeros((3, 3, 3));
        let out = composite(live.view(), black.view(), &Alpha::Scalar(0.5)).unwrap();
        for (o, l) in out.iter().zip(live.iter()) {
            assert!((*o as i32 * 2 - *l as i32).abs() <= 1);
        }
    }

    #[test]
    fn sharp_schedules() {
        let s = make_sharp_schedule(8).unwrap();
        assert_eq!(s.scalars().unwrap(), [vec![1.0; 8], vec![0.0; 8]].concat());
        let s = make_sharp_schedule(1).unwrap();
        assert_eq!(s.scalars().unwrap(), [vec![1.0], vec![0.0; 15]].concat());
        assert!(s.check().is_ok());
        assert!(matches!(make_sharp_schedule(0), Err(Error::Boundary(0))));
        assert!(matches!(make_sharp_schedule(16), Err(Error::Boundary(16))));
    }

    #[test]
    fn full_length_dissolve_is_all_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_dissolve_schedule(16, &mut rng).unwrap();
        let v = s.scalars().unwrap();
        assert!(v.iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.check().is_ok());
    }

    #[test]
    fn short_dissolve_is_embedded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = make_dissolve_schedule(2, &mut rng).unwrap();
        let v = s.scalars().unwrap();
        let o = s.descriptor.offset;
        assert!(v[..o].iter().all(|&a| a == 1.0));
        assert!(v[o + 2..].iter().all(|&a| a == 0.0));
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
        assert!(matches!(make_dissolve_schedule(1, &mut rng), Err(Error::Duration(1))));
        assert!(matches!(make_dissolve_schedule(17, &mut rng), Err(Error::Duration(17))));
    }

    #[test]
    fn dissolve_is_reproducible() {
        let a = make_dissolve_schedule(7, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = make_dissolve_schedule(7, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn compositing_is_exact(b in any::<u8>(), f in any::<u8>(), a in 0.0f32..=1.0) {
            let out = composite(px(b).view(), px(f).view(), &Alpha::Scalar(a)).unwrap();
            let expected = (a as f64 * b as f64 + (1.0 - a as f64) * f as f64).round() as u8;
            prop_assert!(out.iter().all(|&v| v == expected));
        }

        #[test]
        fn dissolves_are_monotone(n in 2usize..=16, seed in any::<u64>()) {
            let s = make_dissolve_schedule(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(s.check().is_ok(), "{:?}", s.check());
        }
    }
}
