//! Finite-difference verification of the analytic gradients.

use ndarray::Array5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::C3dSbd;
use super::train::one_hot;
use super::C3dSbdConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub batch: usize,
    pub seed: u64,
    /// Scale analytic gradients by 1.05 before comparing (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            samples: 240,
            eps: 1e-6,
            tolerance: 1e-4,
            floor: 1e-6,
            batch: 2,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst parameter.
    pub worst: (String, usize),
    pub per_tensor: Vec<(String, f64)>,
    pub passed: bool,
}

/// Compares backpropagated gradients of a double-precision network against
/// central differences at parameters sampled round-robin across tensors.
pub fn gradcheck(config: &C3dSbdConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut net = C3dSbd::<f64>::new(config.clone(), opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    // Zero biases put dead units exactly on a ReLU kink; move off it.
    let params = &mut net.params;
    for b in params.conv_b.iter_mut().chain(&mut params.fc_b).chain(&mut params.bn_beta) {
        b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let i = config.input;
    let x = Array5::from_shape_simple_fn((opts.batch, 3, i.frames, i.height, i.width), || rng.random_range(-1.0..1.0));
    let classes: Vec<usize> = (0..opts.batch).map(|_| rng.random_range(0..config.num_classes)).collect();
    let t = one_hot::<f64>(&classes, config.num_classes);
    let dropout_seed = opts.seed ^ 0xD00D;
    let (_, _, grads, _) = net.loss_and_grad(x.view(), t.view(), dropout_seed)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, s)| (n, s.to_vec())).collect();

    let mut probe = net.clone();
    let mut loss_at = |tensor: usize, index: usize, value: f64| -> Result<f64> {
        let saved = {
            let mut slots = probe.params.slices_mut();
            let old = slots[tensor][index];
            slots[tensor][index] = value;
            old
        };
        let (loss, ..) = probe.loss_and_grad(x.view(), t.view(), dropout_seed)?;
        probe.params.slices_mut()[tensor][index] = saved;
        Ok(loss)
    };

    let mut per_tensor: Vec<(String, f64)> = analytic.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
    let mut worst = (String::new(), 0);
    let mut max_rel: f64 = 0.0;
    for k in 0..opts.samples {
        let tensor = k % analytic.len();
        let index = rng.random_range(0..analytic[tensor].1.len());
        let w = net.params.tensors()[tensor].2[index];
        let plus = loss_at(tensor, index, w + opts.eps)?;
        let minus = loss_at(tensor, index, w - opts.eps)?;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let mut a = analytic[tensor].1[index];
        if opts.corrupt {
            a = a * 1.05 + opts.floor;
        }
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(opts.floor);
        if rel > per_tensor[tensor].1 {
            per_tensor[tensor].1 = rel;
        }
        if rel > max_rel {
            max_rel = rel;
            worst = (analytic[tensor].0.clone(), index);
        }
    }
    Ok(GradcheckReport {
        checked: opts.samples,
        max_rel_error: max_rel,
        worst,
        per_tensor,
        passed: max_rel < opts.tolerance,
    })
}
