//! The C3D-style spatio-temporal network: configuration, layer geometry,
//! forward/backward passes, training and checkpoints.

mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::NdFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use model::{segments_to_tensor, BatchStats, C3dSbd, Forward, Params};
pub use train::{one_hot, train, train_step, EpochLog, Sgd, TrainLog, TrainSchedule};

/// Floating point element type of the network (`f32` or `f64`).
pub trait Real: NdFloat + Default {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    BatchNorm,
    Lrn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }
}

/// Network input layout `(batch, 3, frames, height, width)` without batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for InputShape {
    fn default() -> Self {
        Self {
            frames: crate::types::SEGMENT_LEN,
            height: crate::types::FRAME_SIDE,
            width: crate::types::FRAME_SIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C3dSbdConfig {
    pub num_classes: usize,
    pub filters: [usize; 5],
    pub fc: [usize; 2],
    pub dropout: f64,
    pub norm: NormKind,
    #[serde(default)]
    pub lrn: LrnParams,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default)]
    pub input: InputShape,
}

fn default_bn_momentum() -> f64 {
    0.1
}
fn default_bn_eps() -> f64 {
    1e-5
}

impl Default for C3dSbdConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            filters: [96, 256, 384, 384, 256],
            fc: [2048, 2048],
            dropout: 0.5,
            norm: NormKind::BatchNorm,
            lrn: LrnParams::default(),
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
            input: InputShape::default(),
        }
    }
}

impl C3dSbdConfig {
    /// Same layer structure with narrower convolutions and fc layers.
    pub fn reduced(filters: [usize; 5], fc: [usize; 2]) -> Self {
        Self {
            filters,
            fc,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.num_classes == 3 || self.num_classes == 4) {
            return Err(Error::Config(format!("num_classes must be 3 or 4, got {}", self.num_classes)));
        }
        if self.filters.contains(&0) || self.fc.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.lrn.size == 0 || self.lrn.size % 2 == 0 {
            return Err(Error::Config("LRN size must be odd".into()));
        }
        let table = shape_table(self, 1)?;
        if table.iter().any(|l| l.shape.contains(&0)) {
            return Err(Error::Config(format!("input {:?} collapses to an empty feature map", self.input)));
        }
        Ok(())
    }

    /// Width of the flattened pool5 output feeding fc6.
    pub fn fc6_input(&self) -> Result<usize> {
        let table = shape_table(self, 1)?;
        let pool5 = &table.iter().find(|l| l.name == "pool5").expect("pool5 row").shape;
        Ok(pool5[1..].iter().product())
    }
}

/// Kernel, stride and padding of a 3D convolution or pooling layer, in
/// `(time, height, width)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Geometry {
    const fn new(kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn output(&self, input: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.pad[i];
            out[i] = if padded < self.kernel[i] {
                0
            } else {
                (padded - self.kernel[i]) / self.stride[i] + 1
            };
        }
        out
    }
}

/// Convolution geometry reproducing the feature-map sizes of the reference
/// architecture table at a 16x112x112 input.
pub const CONV_GEOMETRY: [Geometry; 5] = [
    Geometry::new([3, 3, 3], [1, 2, 2], [0, 0, 0]),
    Geometry::new([3, 3, 3], [1, 1, 1], [1, 2, 2]),
    Geometry::new([3, 3, 3], [1, 1, 1], [1, 1, 1]),
    Geometry::new([3, 3, 3], [1, 1, 1], [1, 1, 1]),
    Geometry::new([3, 3, 3], [1, 1, 1], [1, 1, 1]),
];

/// Max pooling after conv1, conv2 and conv5.
pub const POOL_GEOMETRY: [Geometry; 3] = [
    Geometry::new([3, 3, 3], [1, 2, 2], [0, 0, 0]),
    Geometry::new([3, 3, 3], [1, 2, 2], [0, 0, 0]),
    Geometry::new([3, 2, 2], [1, 2, 2], [0, 0, 0]),
];

/// Output shape of one named layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{:<6} {}", self.name, dims.join("x"))
    }
}

/// Feature-map shapes of every layer for a batch, by arithmetic alone.
pub fn shape_table(config: &C3dSbdConfig, batch: usize) -> Result<Vec<LayerShape>> {
    let mut dims = [config.input.frames, config.input.height, config.input.width];
    let mut rows = vec![LayerShape {
        name: "input".into(),
        shape: vec![batch, 3, dims[0], dims[1], dims[2]],
    }];
    let mut push = |name: &str, c: usize, d: [usize; 3]| {
        rows.push(LayerShape {
            name: name.into(),
            shape: vec![batch, c, d[0], d[1], d[2]],
        })
    };
    for (i, g) in CONV_GEOMETRY.iter().enumerate() {
        dims = g.output(dims);
        push(&format!("conv{}", i + 1), config.filters[i], dims);
        let pool = match i {
            0 => Some(0),
            1 => Some(1),
            4 => Some(2),
            _ => None,
        };
        if let Some(p) = pool {
            dims = POOL_GEOMETRY[p].output(dims);
            let name = if p == 2 { "pool5".to_string() } else { format!("pool{}", p + 1) };
            push(&name, config.filters[i], dims);
        }
    }
    rows.push(LayerShape {
        name: "fc6".into(),
        shape: vec![batch, config.fc[0]],
    });
    rows.push(LayerShape {
        name: "fc7".into(),
        shape: vec![batch, config.fc[1]],
    });
    rows.push(LayerShape {
        name: "fc8".into(),
        shape: vec![batch, config.num_classes],
    });
    Ok(rows)
}

/// Layers whose activations can be extracted as features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    Fc6,
    Fc7,
    Fc8,
}

impl FeatureLayer {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureLayer::Fc6 => "fc6",
            FeatureLayer::Fc7 => "fc7",
            FeatureLayer::Fc8 => "fc8",
        }
    }

    pub fn width(self, config: &C3dSbdConfig) -> usize {
        match self {
            FeatureLayer::Fc6 => config.fc[0],
            FeatureLayer::Fc7 => config.fc[1],
            FeatureLayer::Fc8 => config.num_classes,
        }
    }
}

impl fmt::Display for FeatureLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc6" => Ok(FeatureLayer::Fc6),
            "fc7" => Ok(FeatureLayer::Fc7),
            "fc8" => Ok(FeatureLayer::Fc8),
            other => Err(Error::Layer(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_dimensions() {
        let rows = shape_table(&C3dSbdConfig::default(), 20).unwrap();
        let get = |n: &str| rows.iter().find(|r| r.name == n).unwrap().shape.clone();
        assert_eq!(get("conv1"), vec![20, 96, 14, 55, 55]);
        assert_eq!(get("pool1"), vec![20, 96, 12, 27, 27]);
        assert_eq!(get("conv2"), vec![20, 256, 12, 29, 29]);
        assert_eq!(get("pool2"), vec![20, 256, 10, 14, 14]);
        assert_eq!(get("conv3"), vec![20, 384, 10, 14, 14]);
        assert_eq!(get("conv4"), vec![20, 384, 10, 14, 14]);
        assert_eq!(get("conv5"), vec![20, 256, 10, 14, 14]);
        assert_eq!(get("pool5"), vec![20, 256, 8, 7, 7]);
        assert_eq!(get("fc8"), vec![20, 3]);
        assert_eq!(C3dSbdConfig::default().fc6_input().unwrap(), 256 * 8 * 7 * 7);
    }

    #[test]
    fn small_input_geometry() {
        let mut cfg = C3dSbdConfig::reduced([2, 3, 3, 3, 2], [4, 4]);
        cfg.input = InputShape { frames: 16, height: 32, width: 32 };
        cfg.validate().unwrap();
        assert_eq!(cfg.fc6_input().unwrap(), 2 * 8 * 2 * 2);
        cfg.input.height = 8;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layer_names() {
        assert_eq!("fc7".parse::<FeatureLayer>().unwrap(), FeatureLayer::Fc7);
        assert!(matches!("conv5".parse::<FeatureLayer>(), Err(Error::Layer(_))));
    }
}
