//! Parameters, forward pass and backpropagation of the network.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array5, ArrayD, ArrayView2, ArrayView5, Axis, Ix2, Ix5, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, BnCache};
use super::{shape_table, C3dSbdConfig, FeatureLayer, LayerShape, NormKind, Real, CONV_GEOMETRY, POOL_GEOMETRY};
use crate::error::{Error, Result};
use crate::types::{FRAME_SIDE, SEGMENT_LEN};

/// Trainable tensors. Batch-norm affine parameters are empty in LRN mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<A> {
    pub conv_w: Vec<Array2<A>>,
    pub conv_b: Vec<Array1<A>>,
    pub bn_gamma: Vec<Array1<A>>,
    pub bn_beta: Vec<Array1<A>>,
    pub fc_w: Vec<Array2<A>>,
    pub fc_b: Vec<Array1<A>>,
}

impl<A: Real> Params<A> {
    pub fn zeros_like(&self) -> Self {
        let z1 = |v: &Vec<Array1<A>>| v.iter().map(|a| Array1::zeros(a.raw_dim())).collect();
        let z2 = |v: &Vec<Array2<A>>| v.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        Self {
            conv_w: z2(&self.conv_w),
            conv_b: z1(&self.conv_b),
            bn_gamma: z1(&self.bn_gamma),
            bn_beta: z1(&self.bn_beta),
            fc_w: z2(&self.fc_w),
            fc_b: z1(&self.fc_b),
        }
    }

    /// Named tensors in a fixed order, with shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[A])> {
        let mut out = Vec::new();
        for i in 0..self.conv_w.len() {
            out.push((format!("conv{}.weight", i + 1), self.conv_w[i].shape().to_vec(), self.conv_w[i].as_slice().expect("contiguous")));
            out.push((format!("conv{}.bias", i + 1), self.conv_b[i].shape().to_vec(), self.conv_b[i].as_slice().expect("contiguous")));
        }
        for i in 0..self.bn_gamma.len() {
            out.push((format!("norm{}.gamma", i + 1), self.bn_gamma[i].shape().to_vec(), self.bn_gamma[i].as_slice().expect("contiguous")));
            out.push((format!("norm{}.beta", i + 1), self.bn_beta[i].shape().to_vec(), self.bn_beta[i].as_slice().expect("contiguous")));
        }
        for i in 0..self.fc_w.len() {
            out.push((format!("fc{}.weight", i + 6), self.fc_w[i].shape().to_vec(), self.fc_w[i].as_slice().expect("contiguous")));
            out.push((format!("fc{}.bias", i + 6), self.fc_b[i].shape().to_vec(), self.fc_b[i].as_slice().expect("contiguous")));
        }
        out
    }

    /// Mutable slices in the same order as [`Params::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [A]> {
        let mut out: Vec<&mut [A]> = Vec::new();
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w.as_slice_mut().expect("contiguous"));
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        for (g, b) in self.bn_gamma.iter_mut().zip(self.bn_beta.iter_mut()) {
            out.push(g.as_slice_mut().expect("contiguous"));
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        for (w, b) in self.fc_w.iter_mut().zip(self.fc_b.iter_mut()) {
            out.push(w.as_slice_mut().expect("contiguous"));
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, s)| s.len()).sum()
    }
}

/// Per-channel statistics of the batch-norm layers from one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<A> {
    pub mean: Vec<Array1<A>>,
    pub var: Vec<Array1<A>>,
    /// Elements per channel the statistics were computed over.
    pub count: Vec<usize>,
}

/// Result of an inference pass.
#[derive(Clone, Debug)]
pub struct Forward<A> {
    pub logits: Array2<A>,
    pub probs: Array2<A>,
    pub features: BTreeMap<FeatureLayer, Array2<A>>,
    pub shapes: Vec<LayerShape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Conv(usize),
    Relu,
    Norm(usize),
    Pool(usize),
    Fc(usize),
    Dropout(usize),
}

const OPS: [Op; 22] = [
    Op::Conv(0),
    Op::Relu,
    Op::Norm(0),
    Op::Pool(0),
    Op::Conv(1),
    Op::Relu,
    Op::Norm(1),
    Op::Pool(1),
    Op::Conv(2),
    Op::Relu,
    Op::Conv(3),
    Op::Relu,
    Op::Conv(4),
    Op::Relu,
    Op::Pool(2),
    Op::Fc(0),
    Op::Relu,
    Op::Dropout(0),
    Op::Fc(1),
    Op::Relu,
    Op::Dropout(1),
    Op::Fc(2),
];

enum Aux<A> {
    None,
    Pool(Array5<u32>),
    Bn(BnCache<A>),
    Lrn(Array5<A>),
    Mask(Array2<A>),
}

enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

struct Trace<A> {
    inputs: Vec<ArrayD<A>>,
    aux: Vec<Aux<A>>,
    logits: Array2<A>,
    shapes: Vec<LayerShape>,
    fc: [Option<Array2<A>>; 2],
    conv5: Option<Array5<A>>,
    stats: BatchStats<A>,
}

fn pool_name(p: usize) -> &'static str {
    ["pool1", "pool2", "pool5"][p]
}

fn softmax<A: Real>(logits: &Array2<A>) -> Array2<A> {
    let mut p = logits.clone();
    for mut row in p.outer_iter_mut() {
        let m = row.fold(A::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Converts `(16, 112, 112, 3)` u8 segments to a `(N, 3, 16, 112, 112)`
/// tensor scaled to `[-1, 1]`.
pub fn segments_to_tensor<'a, A: Real>(segments: impl IntoIterator<Item = &'a ndarray::Array4<u8>>) -> Result<Array5<A>> {
    let segs: Vec<&ndarray::Array4<u8>> = segments.into_iter().collect();
    let mut x = Array5::<A>::zeros((segs.len(), 3, SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE));
    for (i, s) in segs.iter().enumerate() {
        let (t, h, w, c) = s.dim();
        if c != 3 || t != SEGMENT_LEN || h != FRAME_SIDE || w != FRAME_SIDE {
            return Err(Error::Shape(format!("segment {i} is {:?}", s.dim())));
        }
        let permuted = s.view().permuted_axes([3, 0, 1, 2]);
        Zip::from(x.index_axis_mut(Axis(0), i))
            .and(&permuted)
            .for_each(|o, &v| *o = A::of(v as f64 / 127.5 - 1.0));
    }
    Ok(x)
}

/// The network with its parameters and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct C3dSbd<A> {
    config: C3dSbdConfig,
    pub params: Params<A>,
    pub running_mean: Vec<Array1<A>>,
    pub running_var: Vec<Array1<A>>,
}

impl<A: Real> C3dSbd<A> {
    /// Fan-in scaled Gaussian weights (`sqrt(2 / fan_in)`, `sqrt(1 / fan_in)`
    /// for the output layer) and zero biases.
    pub fn new(config: C3dSbdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = |rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, (gain / cols as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || A::of(normal.sample(rng)))
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut c_in = 3;
        for (i, &f) in config.filters.iter().enumerate() {
            let k: usize = CONV_GEOMETRY[i].kernel.iter().product();
            conv_w.push(gauss(f, c_in * k, 2.0, &mut rng));
            conv_b.push(Array1::zeros(f));
            c_in = f;
        }
        let (bn_gamma, bn_beta, running_mean, running_var) = match config.norm {
            NormKind::BatchNorm => {
                let widths = [config.filters[0], config.filters[1]];
                (
                    widths.iter().map(|&c| Array1::ones(c)).collect(),
                    widths.iter().map(|&c| Array1::zeros(c)).collect(),
                    widths.iter().map(|&c| Array1::zeros(c)).collect(),
                    widths.iter().map(|&c| Array1::ones(c)).collect(),
                )
            }
            NormKind::Lrn => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        let widths = [config.fc6_input()?, config.fc[0], config.fc[1], config.num_classes];
        let mut fc_w = Vec::new();
        let mut fc_b = Vec::new();
        for i in 0..3 {
            let gain = if i == 2 { 1.0 } else { 2.0 };
            fc_w.push(gauss(widths[i + 1], widths[i], gain, &mut rng));
            fc_b.push(Array1::zeros(widths[i + 1]));
        }
        Ok(Self {
            config,
            params: Params {
                conv_w,
                conv_b,
                bn_gamma,
                bn_beta,
                fc_w,
                fc_b,
            },
            running_mean,
            running_var,
        })
    }

    pub fn config(&self) -> &C3dSbdConfig {
        &self.config
    }

    fn check_input(&self, x: &ArrayView5<A>) -> Result<()> {
        let i = self.config.input;
        let (_, c, t, h, w) = x.dim();
        if (c, t, h, w) != (3, i.frames, i.height, i.width) {
            return Err(Error::Shape(format!(
                "network expects (N, 3, {}, {}, {}), got {:?}",
                i.frames,
                i.height,
                i.width,
                x.dim()
            )));
        }
        Ok(())
    }

    fn run(&self, x: ArrayView5<A>, mode: Mode, keep_conv5: bool) -> Result<Trace<A>> {
        self.check_input(&x)?;
        let training = matches!(mode, Mode::Train { .. });
        let cfg = &self.config;
        let p = &self.params;
        let mut act: ArrayD<A> = x.to_owned().into_dyn();
        let mut inputs = Vec::new();
        let mut aux = Vec::new();
        let mut shapes = vec![LayerShape {
            name: "input".into(),
            shape: act.shape().to_vec(),
        }];
        let mut fc: [Option<Array2<A>>; 2] = [None, None];
        let mut conv5 = None;
        let mut stats = BatchStats {
            mean: Vec::new(),
            var: Vec::new(),
            count: Vec::new(),
        };
        let mut prev = None;
        for &op in OPS.iter() {
            let input = if training { Some(act.clone()) } else { None };
            let mut extra = Aux::None;
            act = match op {
                Op::Conv(i) => {
                    let x5 = act.view().into_dimensionality::<Ix5>().expect("5d");
                    let y = layers::conv_forward(x5, p.conv_w[i].view(), p.conv_b[i].view(), &CONV_GEOMETRY[i]);
                    shapes.push(LayerShape {
                        name: format!("conv{}", i + 1),
                        shape: y.shape().to_vec(),
                    });
                    y.into_dyn()
                }
                Op::Relu => {
                    act.mapv_inplace(|v| v.max(A::zero()));
                    match prev {
                        Some(Op::Fc(i)) if i < 2 => fc[i] = Some(act.view().into_dimensionality::<Ix2>().expect("2d").to_owned()),
                        Some(Op::Conv(4)) if keep_conv5 => conv5 = Some(act.view().into_dimensionality::<Ix5>().expect("5d").to_owned()),
                        _ => {}
                    }
                    act
                }
                Op::Norm(i) => {
                    let x5 = act.into_dimensionality::<Ix5>().expect("5d");
                    match cfg.norm {
                        NormKind::BatchNorm if training => {
                            let (y, cache) = layers::bn_forward_train(x5.view(), p.bn_gamma[i].view(), p.bn_beta[i].view(), cfg.bn_eps);
                            stats.mean.push(cache.mean.clone());
                            stats.var.push(cache.var.clone());
                            stats.count.push(x5.len() / x5.dim().1);
                            extra = Aux::Bn(cache);
                            y.into_dyn()
                        }
                        NormKind::BatchNorm => layers::bn_forward_eval(
                            x5,
                            p.bn_gamma[i].view(),
                            p.bn_beta[i].view(),
                            self.running_mean[i].view(),
                            self.running_var[i].view(),
                            cfg.bn_eps,
                        )
                        .into_dyn(),
                        NormKind::Lrn => {
                            let (y, scale) = layers::lrn_forward(x5.view(), &cfg.lrn);
                            if training {
                                extra = Aux::Lrn(scale);
                            }
                            y.into_dyn()
                        }
                    }
                }
                Op::Pool(i) => {
                    let x5 = act.view().into_dimensionality::<Ix5>().expect("5d");
                    let (y, arg) = layers::pool_forward(x5, &POOL_GEOMETRY[i]);
                    if training {
                        extra = Aux::Pool(arg);
                    }
                    shapes.push(LayerShape {
                        name: pool_name(i).into(),
                        shape: y.shape().to_vec(),
                    });
                    y.into_dyn()
                }
                Op::Fc(i) => {
                    let n = act.shape()[0];
                    let x2 = act
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((n, p.fc_w[i].ncols()))
                        .map_err(|e| Error::Shape(e.to_string()))?;
                    let mut y = x2.dot(&p.fc_w[i].t());
                    y += &p.fc_b[i];
                    shapes.push(LayerShape {
                        name: format!("fc{}", i + 6),
                        shape: y.shape().to_vec(),
                    });
                    y.into_dyn()
                }
                Op::Dropout(i) => match mode {
                    Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                        rng.set_stream(i as u64 + 1);
                        let keep = 1.0 - cfg.dropout;
                        let scale = A::of(1.0 / keep);
                        let mut x2 = act.into_dimensionality::<Ix2>().expect("2d");
                        let mask = Array2::from_shape_simple_fn(x2.raw_dim(), || {
                            if rng.random_bool(keep) {
                                scale
                            } else {
                                A::zero()
                            }
                        });
                        x2 *= &mask;
                        extra = Aux::Mask(mask);
                        x2.into_dyn()
                    }
                    _ => act,
                },
            };
            if let Some(input) = input {
                inputs.push(input);
                aux.push(extra);
            }
            prev = Some(op);
        }
        Ok(Trace {
            inputs,
            aux,
            logits: act.into_dimensionality::<Ix2>().expect("2d"),
            shapes,
            fc,
            conv5,
            stats,
        })
    }

    /// Inference pass (dropout off, running batch-norm statistics).
    pub fn forward(&self, x: ArrayView5<A>, layers: &[FeatureLayer]) -> Result<Forward<A>> {
        let trace = self.run(x, Mode::Eval, false)?;
        let [fc6, fc7] = trace.fc;
        let mut features = BTreeMap::new();
        for &l in layers {
            let v = match l {
                FeatureLayer::Fc6 => fc6.clone().expect("fc6 recorded"),
                FeatureLayer::Fc7 => fc7.clone().expect("fc7 recorded"),
                FeatureLayer::Fc8 => trace.logits.clone(),
            };
            features.insert(l, v);
        }
        Ok(Forward {
            probs: softmax(&trace.logits),
            logits: trace.logits,
            features,
            shapes: trace.shapes,
        })
    }

    /// Post-ReLU conv5 responses `(N, C5, T, H, W)` in inference mode.
    pub fn conv5_responses(&self, x: ArrayView5<A>) -> Result<Array5<A>> {
        Ok(self.run(x, Mode::Eval, true)?.conv5.expect("conv5 recorded"))
    }

    /// Features of one layer for a list of u8 segments, one row per segment.
    pub fn extract_features<'a>(&self, segments: impl IntoIterator<Item = &'a ndarray::Array4<u8>>, layer: FeatureLayer) -> Result<Array2<A>> {
        let x = segments_to_tensor::<A>(segments)?;
        let mut f = self.forward(x.view(), &[layer])?;
        Ok(f.features.remove(&layer).expect("requested layer"))
    }

    /// Mean softmax cross-entropy against target distributions `(N, K)` and
    /// its gradient, in training mode.
    pub fn loss_and_grad(&self, x: ArrayView5<A>, targets: ArrayView2<A>, dropout_seed: u64) -> Result<(A, Array2<A>, Params<A>, BatchStats<A>)> {
        let n = x.dim().0;
        if targets.dim() != (n, self.config.num_classes) {
            return Err(Error::Shape(format!("targets {:?} for batch of {n}", targets.dim())));
        }
        let trace = self.run(x, Mode::Train { dropout_seed }, false)?;
        let probs = softmax(&trace.logits);
        let nf = A::of(n as f64);
        let mut loss = A::zero();
        Zip::from(&probs).and(&targets).for_each(|&p, &t| {
            if t > A::zero() {
                loss = loss - t * p.max(A::min_positive_value()).ln();
            }
        });
        let dlogits = (&probs - &targets).mapv(|v| v / nf);
        let grads = self.backward(&trace, dlogits);
        Ok((loss / nf, trace.logits, grads, trace.stats))
    }

    fn backward(&self, trace: &Trace<A>, dlogits: Array2<A>) -> Params<A> {
        let p = &self.params;
        let mut grads = p.zeros_like();
        let mut g: ArrayD<A> = dlogits.into_dyn();
        for (k, &op) in OPS.iter().enumerate().rev() {
            let input = &trace.inputs[k];
            g = match op {
                Op::Fc(i) => {
                    let n = input.shape()[0];
                    let x2 = input
                        .as_standard_layout()
                        .into_shape_with_order((n, p.fc_w[i].ncols()))
                        .expect("flatten")
                        .into_owned();
                    let g2 = g.into_dimensionality::<Ix2>().expect("2d");
                    grads.fc_w[i] = g2.t().dot(&x2);
                    grads.fc_b[i] = g2.sum_axis(Axis(0));
                    let dx = g2.dot(&p.fc_w[i]);
                    dx.into_shape_with_order(input.shape()).expect("unflatten").into_dyn()
                }
                Op::Dropout(_) => match &trace.aux[k] {
                    Aux::Mask(mask) => {
                        let mut g2 = g.into_dimensionality::<Ix2>().expect("2d");
                        g2 *= mask;
                        g2.into_dyn()
                    }
                    _ => g,
                },
                Op::Relu => {
                    Zip::from(&mut g).and(input).for_each(|d, &x| {
                        if x <= A::zero() {
                            *d = A::zero();
                        }
                    });
                    g
                }
                Op::Pool(_) => {
                    let Aux::Pool(arg) = &trace.aux[k] else { unreachable!("pool cache") };
                    let s = input.shape();
                    let g5 = g.into_dimensionality::<Ix5>().expect("5d");
                    layers::pool_backward(g5.view(), arg, [s[0], s[1], s[2], s[3], s[4]]).into_dyn()
                }
                Op::Norm(i) => {
                    let g5 = g.into_dimensionality::<Ix5>().expect("5d");
                    match &trace.aux[k] {
                        Aux::Bn(cache) => {
                            let (dx, dgamma, dbeta) = layers::bn_backward(g5.view(), cache, p.bn_gamma[i].view());
                            grads.bn_gamma[i] = dgamma;
                            grads.bn_beta[i] = dbeta;
                            dx.into_dyn()
                        }
                        Aux::Lrn(scale) => {
                            let x5 = input.view().into_dimensionality::<Ix5>().expect("5d");
                            layers::lrn_backward(x5, g5.view(), scale, &self.config.lrn).into_dyn()
                        }
                        _ => unreachable!("norm cache"),
                    }
                }
                Op::Conv(i) => {
                    let x5 = input.view().into_dimensionality::<Ix5>().expect("5d");
                    let g5 = g.into_dimensionality::<Ix5>().expect("5d");
                    let cg = layers::conv_backward(x5, p.conv_w[i].view(), g5.view(), &CONV_GEOMETRY[i], i > 0);
                    grads.conv_w[i] = cg.dw;
                    grads.conv_b[i] = cg.db;
                    match cg.dx {
                        Some(dx) => dx.into_dyn(),
                        None => break,
                    }
                }
            };
        }
        grads
    }

    /// Folds one batch's statistics into the running batch-norm estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats<A>) {
        let m = A::of(self.config.bn_momentum);
        for i in 0..stats.mean.len() {
            let n = stats.count[i] as f64;
            let unbias = A::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            Zip::from(&mut self.running_mean[i])
                .and(&stats.mean[i])
                .for_each(|r, &b| *r = (A::one() - m) * *r + m * b);
            Zip::from(&mut self.running_var[i])
                .and(&stats.var[i])
                .for_each(|r, &b| *r = (A::one() - m) * *r + m * b * unbias);
        }
    }

    /// Arithmetic shape table for this configuration.
    pub fn shape_table(&self, batch: usize) -> Result<Vec<LayerShape>> {
        shape_table(&self.config, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::InputShape;

    fn tiny() -> C3dSbdConfig {
        let mut cfg = C3dSbdConfig::reduced([2, 3, 3, 3, 2], [6, 5]);
        cfg.input = InputShape { frames: 16, height: 32, width: 32 };
        cfg
    }

    fn input(n: usize, seed: u64) -> Array5<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array5::from_shape_simple_fn((n, 3, 16, 32, 32), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shapes_follow_table() {
        let net = C3dSbd::<f64>::new(tiny(), 1).unwrap();
        let out = net.forward(input(2, 0).view(), &[FeatureLayer::Fc6]).unwrap();
        assert_eq!(out.shapes, net.shape_table(2).unwrap());
        assert_eq!(out.features[&FeatureLayer::Fc6].dim(), (2, 6));
    }

    #[test]
    fn zero_input_gives_uniform_softmax() {
        let net = C3dSbd::<f64>::new(tiny(), 3).unwrap();
        let out = net.forward(Array5::zeros((2, 3, 16, 32, 32)).view(), &[]).unwrap();
        for &p in out.probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_is_deterministic_and_rows_sum_to_one() {
        let net = C3dSbd::<f32>::new(tiny(), 4).unwrap();
        let x = input(3, 1).mapv(|v| v as f32);
        let a = net.forward(x.view(), &[FeatureLayer::Fc8]).unwrap();
        let b = net.forward(x.view(), &[FeatureLayer::Fc8]).unwrap();
        assert_eq!(a.logits, b.logits);
        for row in a.probs.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = C3dSbd::<f64>::new(tiny(), 1).unwrap();
        assert!(matches!(
            net.forward(Array5::zeros((1, 3, 15, 32, 32)).view(), &[]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_conv_gradients() {
        let mut net = C3dSbd::<f64>::new(tiny(), 1).unwrap();
        for s in net.params.slices_mut() {
            s.fill(0.0);
        }
        let x = Array5::zeros((2, 3, 16, 32, 32));
        let t = Array2::from_elem((2, 3), 1.0 / 3.0);
        let (_, _, g, _) = net.loss_and_grad(x.view(), t.view(), 0).unwrap();
        for w in &g.conv_w {
            assert!(w.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let mut net = C3dSbd::<f64>::new(tiny(), 1).unwrap();
        let x = input(2, 5);
        let t = Array2::from_shape_fn((2, 3), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let (_, _, _, stats) = net.loss_and_grad(x.view(), t.view(), 0).unwrap();
        net.update_running_stats(&stats);
        let expect = 0.1 * stats.mean[0][0];
        assert!((net.running_mean[0][0] - expect).abs() < 1e-12);
    }
}
