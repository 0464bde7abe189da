//! Mini-batch momentum SGD over a dataset manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::{Array2, ArrayView2, ArrayView5};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{segments_to_tensor, C3dSbd, Params};
use super::{C3dSbdConfig, Real};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::types::TransitionLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub base_lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            lr_decay: 0.1,
            decay_every: 2,
            epochs: 6,
            batch_size: 20,
            momentum: 0.9,
        }
    }
}

impl TrainSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    /// Learning rate of every epoch.
    pub fn lr_sequence(&self) -> Vec<f64> {
        (0..self.epochs).map(|e| self.lr_at(e)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "invalid lr {} or momentum {}",
                self.base_lr, self.momentum
            )));
        }
        Ok(())
    }
}

/// Heavy-ball momentum: `v = m v + lr g; w -= v`.
#[derive(Clone, Debug)]
pub struct Sgd<A> {
    velocity: Params<A>,
    momentum: A,
}

impl<A: Real> Sgd<A> {
    pub fn new(net: &C3dSbd<A>, momentum: f64) -> Self {
        Self {
            velocity: net.params.zeros_like(),
            momentum: A::of(momentum),
        }
    }

    pub fn step(&mut self, net: &mut C3dSbd<A>, grads: &Params<A>, lr: f64) {
        let lr = A::of(lr);
        let g = grads.tensors();
        for ((w, v), (_, _, g)) in net.params.slices_mut().into_iter().zip(self.velocity.slices_mut()).zip(g) {
            for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + lr * g;
                *w = *w - *v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    /// Training-mode accuracy per class over the final epoch.
    pub per_class_accuracy: BTreeMap<TransitionLabel, f64>,
    pub final_loss: f64,
}

/// One-hot rows for class indices.
pub fn one_hot<A: Real>(classes: &[usize], num_classes: usize) -> Array2<A> {
    Array2::from_shape_fn((classes.len(), num_classes), |(i, j)| if classes[i] == j { A::one() } else { A::zero() })
}

fn argmax<A: Real>(row: ndarray::ArrayView1<A>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn dropout_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One optimizer step on a batch. Returns the batch loss and logits.
pub fn train_step<A: Real>(
    net: &mut C3dSbd<A>,
    opt: &mut Sgd<A>,
    x: ArrayView5<A>,
    targets: ArrayView2<A>,
    lr: f64,
    dropout_seed: u64,
) -> Result<(f64, Array2<A>)> {
    let (loss, logits, grads, stats) = net.loss_and_grad(x, targets, dropout_seed)?;
    opt.step(net, &grads, lr);
    net.update_running_stats(&stats);
    Ok((loss.as_f64(), logits))
}

/// Trains a fresh network on the segments of `manifest` (payloads resolved
/// against `base`).
pub fn train(
    manifest: &DatasetManifest,
    base: &Path,
    config: C3dSbdConfig,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(C3dSbd<f32>, TrainLog)> {
    schedule.validate()?;
    let classes = TransitionLabel::classes(config.num_classes)?;
    for &label in classes {
        if manifest.count(label) == 0 {
            return Err(Error::Coverage(label.to_string()));
        }
    }
    if let Some(e) = manifest.entries.iter().find(|e| !classes.contains(&e.label)) {
        return Err(Error::Config(format!(
            "segment {} is labeled `{}`, which a {}-class model cannot learn",
            e.segment_id, e.label, config.num_classes
        )));
    }
    let mut net = C3dSbd::<f32>::new(config, seed)?;
    let mut opt = Sgd::new(&net, schedule.momentum);
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    let mut log = TrainLog {
        seed,
        ..TrainLog::default()
    };
    let mut step = 0;
    info!(
        "training on {} segments, {} parameters, seed {seed}",
        manifest.len(),
        net.params.count()
    );
    for epoch in 0..schedule.epochs {
        let started = Instant::now();
        let lr = schedule.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut hits: BTreeMap<TransitionLabel, (usize, usize)> = BTreeMap::new();
        for chunk in order.chunks(schedule.batch_size) {
            let frames = chunk
                .par_iter()
                .map(|&i| DatasetManifest::load_frames(&manifest.entries[i], base))
                .collect::<Result<Vec<_>>>()?;
            let x = segments_to_tensor::<f32>(frames.iter())?;
            let labels: Vec<usize> = chunk.iter().map(|&i| manifest.entries[i].label.index()).collect();
            let t = one_hot::<f32>(&labels, net.config().num_classes);
            let (loss, logits) = train_step(&mut net, &mut opt, x.view(), t.view(), lr, dropout_seed(seed, step))?;
            if !loss.is_finite() {
                return Err(Error::Config(format!("training loss became {loss} at step {step}")));
            }
            step += 1;
            log.step_losses.push(loss);
            loss_sum += loss * chunk.len() as f64;
            for (row, &y) in logits.outer_iter().zip(&labels) {
                let ok = argmax(row) == y;
                correct += ok as usize;
                let h = hits.entry(TransitionLabel::from_index(y).expect("class index")).or_default();
                h.0 += ok as usize;
                h.1 += 1;
            }
        }
        let entry = EpochLog {
            epoch,
            lr,
            mean_loss: loss_sum / manifest.len() as f64,
            accuracy: correct as f64 / manifest.len() as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {} lr {:.1e} loss {:.4} acc {:.3} ({:.1}s)",
            epoch + 1,
            lr,
            entry.mean_loss,
            entry.accuracy,
            entry.seconds
        );
        log.epochs.push(entry);
        log.per_class_accuracy = hits.into_iter().map(|(l, (ok, n))| (l, ok as f64 / n as f64)).collect();
    }
    log.final_loss = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InputShape;
    use ndarray::Array5;
    use rand::Rng;

    #[test]
    fn default_lr_sequence() {
        let s = TrainSchedule::default();
        let lrs = s.lr_sequence();
        let expect = [1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-6];
        for (a, b) in lrs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-18);
        }
        assert_eq!(s.batch_size, 20);
        assert_eq!(s.momentum, 0.9);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let mut cfg = C3dSbdConfig::reduced([4, 6, 6, 6, 4], [16, 16]);
        cfg.input = InputShape { frames: 16, height: 32, width: 32 };
        let mut net = C3dSbd::<f64>::new(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array5::from_shape_simple_fn((6, 3, 16, 32, 32), || rng.random_range(-1.0..1.0));
        let t = one_hot::<f64>(&[0, 1, 2, 0, 1, 2], 3);
        let mut opt = Sgd::new(&net, 0.9);
        let mut losses = Vec::new();
        for _ in 0..11 {
            let (loss, _) = train_step(&mut net, &mut opt, x.view(), t.view(), 1e-4, 5).unwrap();
            losses.push(loss);
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }
}
