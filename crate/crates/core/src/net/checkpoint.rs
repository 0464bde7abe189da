//! Single-file checkpoints: a magic line, a length-prefixed JSON header and
//! raw little-endian `f32` tensors.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::model::C3dSbd;
use super::train::{TrainLog, TrainSchedule};
use super::{shape_table, C3dSbdConfig, Geometry, LayerShape, CONV_GEOMETRY, POOL_GEOMETRY};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &str = "c3dsbd-ckpt/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub conv: Vec<Geometry>,
    pub pool: Vec<Geometry>,
    /// Feature-map shapes for a batch of 20.
    pub table: Vec<LayerShape>,
    pub note: String,
}

impl GeometryRecord {
    fn for_config(config: &C3dSbdConfig) -> Result<Self> {
        Ok(Self {
            conv: CONV_GEOMETRY.to_vec(),
            pool: POOL_GEOMETRY.to_vec(),
            table: shape_table(config, 20)?,
            note: "strides and paddings reconstructed to reproduce the reference feature-map sizes; \
                   conv2 uses spatial padding 2 and pool5 a 3x2x2 kernel"
                .into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    config: C3dSbdConfig,
    schedule: Option<TrainSchedule>,
    geometry: GeometryRecord,
    log: Option<TrainLog>,
    tensors: Vec<TensorEntry>,
}

/// A trained network with its training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: C3dSbd<f32>,
    pub schedule: Option<TrainSchedule>,
    pub log: Option<TrainLog>,
}

impl Checkpoint {
    pub fn new(model: C3dSbd<f32>, schedule: Option<TrainSchedule>, log: Option<TrainLog>) -> Self {
        Self { model, schedule, log }
    }

    fn named_tensors(model: &C3dSbd<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = model.params.tensors();
        for (i, (m, v)) in model.running_mean.iter().zip(&model.running_var).enumerate() {
            out.push((format!("norm{}.running_mean", i + 1), m.shape().to_vec(), m.as_slice().expect("contiguous")));
            out.push((format!("norm{}.running_var", i + 1), v.shape().to_vec(), v.as_slice().expect("contiguous")));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = Self::named_tensors(&self.model);
        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, shape, data) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len(),
            });
            offset += data.len();
        }
        let header = Header {
            schema: CHECKPOINT_MAGIC.into(),
            config: self.model.config().clone(),
            schedule: self.schedule.clone(),
            geometry: GeometryRecord::for_config(self.model.config())?,
            log: self.log.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + offset * 4 + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let magic_len = CHECKPOINT_MAGIC.len() + 1;
        if bytes.len() < magic_len + 8 || &bytes[..magic_len - 1] != CHECKPOINT_MAGIC.as_bytes() {
            return Err(bad("missing c3dsbd-ckpt/1 magic"));
        }
        let json_len = u64::from_le_bytes(bytes[magic_len..magic_len + 8].try_into().expect("8 bytes")) as usize;
        let data_start = magic_len + 8 + json_len;
        if bytes.len() < data_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[magic_len + 8..data_start])?;
        let raw = &bytes[data_start..];
        let mut model = C3dSbd::<f32>::new(header.config.clone(), 0)?;
        let expected = Self::named_tensors(&model)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect::<Vec<_>>();
        if expected.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the configuration"));
        }
        let mut values = Vec::new();
        for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
            if &entry.name != name || &entry.shape != shape {
                return Err(Error::Checkpoint(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
            }
            let end = (entry.offset + entry.len) * 4;
            if raw.len() < end {
                return Err(bad("truncated tensor data"));
            }
            let v: Vec<f32> = raw[entry.offset * 4..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            values.push(v);
        }
        let mut values = values.into_iter();
        for slot in model.params.slices_mut() {
            slot.copy_from_slice(&values.next().expect("counted"));
        }
        for i in 0..model.running_mean.len() {
            model.running_mean[i] = Array1::from_vec(values.next().expect("counted"));
            model.running_var[i] = Array1::from_vec(values.next().expect("counted"));
        }
        Ok(Self {
            model,
            schedule: header.schedule,
            log: header.log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InputShape;

    #[test]
    fn round_trip() {
        let mut cfg = C3dSbdConfig::reduced([2, 3, 3, 3, 2], [5, 4]);
        cfg.input = InputShape { frames: 16, height: 32, width: 32 };
        let mut model = C3dSbd::<f32>::new(cfg, 9).unwrap();
        model.running_mean[1][2] = 0.25;
        let ck = Checkpoint::new(model, Some(TrainSchedule::default()), None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"c3dsbd-ckpt/1\n"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }
}
