//! Linear one-vs-rest SVM over network features, plus the softmax bypass.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::net::FeatureLayer;
use crate::types::TransitionLabel;

pub const SVM_SCHEMA: &str = "sbd-svm/1";

/// How segments without a transition are recognized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum NoTransitionMode {
    /// `no_transition` is an ordinary one-vs-rest class.
    #[default]
    Class,
    /// Only transition classes are trained; a segment whose best score is
    /// below `threshold` is labeled `no_transition`.
    Rejection { threshold: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub no_transition: NoTransitionMode,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 500,
            tolerance: 1e-4,
            seed: 0,
            no_transition: NoTransitionMode::Class,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub schema: String,
    pub kernel: String,
    pub layer: FeatureLayer,
    pub width: usize,
    /// Class of each weight row, in tie-break order.
    pub classes: Vec<TransitionLabel>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub no_transition: NoTransitionMode,
    pub counts: BTreeMap<TransitionLabel, usize>,
    pub training_accuracy: f64,
    pub config: SvmConfig,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dual coordinate descent for the hinge-loss linear SVM with the bias
/// folded in as a constant feature. `y` is +1/-1.
fn train_binary(x: ArrayView2<f64>, y: &[f64], cfg: &SvmConfig, stream: u64) -> (Array1<f64>, f64) {
    let (n, d) = x.dim();
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let q: Vec<f64> = x.outer_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = x.row(i);
            let g = y[i] * (w.dot(&xi) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == cfg.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, cfg.c);
                let delta = (alpha[i] - old) * y[i];
                w.scaled_add(delta, &xi);
                b += delta;
            }
        }
        if pg_max - pg_min < cfg.tolerance {
            break;
        }
    }
    (w, b)
}

impl SvmModel {
    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.width {
            return Err(Error::Shape(format!(
                "feature width {width} does not match the {} model width {}",
                self.layer, self.width
            )));
        }
        Ok(())
    }

    /// Decision values `w.x + b` of every class row.
    pub fn margins(&self, feature: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_width(feature.len())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(feature.iter()).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let model: SvmModel = serde_json::from_str(&fs::read_to_string(path).at(path)?)?;
        if model.schema != SVM_SCHEMA {
            return Err(Error::Config(format!("unsupported SVM schema `{}`", model.schema)));
        }
        Ok(model)
    }
}

/// Trains one linear SVM per class on rows of `features`.
pub fn train_svm(features: ArrayView2<f64>, labels: &[TransitionLabel], layer: FeatureLayer, cfg: &SvmConfig) -> Result<SvmModel> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", features.nrows(), labels.len())));
    }
    let mut counts: BTreeMap<TransitionLabel, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let rejection = matches!(cfg.no_transition, NoTransitionMode::Rejection { .. });
    let classes: Vec<TransitionLabel> = counts
        .keys()
        .copied()
        .filter(|&l| !(rejection && l == TransitionLabel::NoTransition))
        .collect();
    if classes.len() < 2 {
        return Err(Error::Degenerate(classes.len()));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &class in &classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let (w, b) = train_binary(features, &y, cfg, class.index() as u64);
        weights.push(w.to_vec());
        biases.push(b);
    }
    let mut model = SvmModel {
        schema: SVM_SCHEMA.into(),
        kernel: "linear".into(),
        layer,
        width: features.ncols(),
        classes,
        weights,
        biases,
        no_transition: cfg.no_transition,
        counts,
        training_accuracy: 0.0,
        config: cfg.clone(),
    };
    let predicted = classify_batch(features, &model)?;
    let correct = predicted.iter().zip(labels).filter(|((p, _), l)| p == *l).count();
    model.training_accuracy = correct as f64 / labels.len() as f64;
    Ok(model)
}

/// Label and score in `[0, 1]` (logistic of the winning margin). Equal
/// margins resolve to the earlier class in `no_transition, gradual, sharp,
/// wipe` order.
pub fn classify_segment(feature: ArrayView1<f64>, model: &SvmModel) -> Result<(TransitionLabel, f64)> {
    let margins = model.margins(feature)?;
    let mut best = 0;
    for (i, &m) in margins.iter().enumerate() {
        if m > margins[best] || (m == margins[best] && model.classes[i] < model.classes[best]) {
            best = i;
        }
    }
    let score = sigmoid(margins[best]);
    if let NoTransitionMode::Rejection { threshold } = model.no_transition {
        if score < threshold {
            return Ok((TransitionLabel::NoTransition, 1.0 - score));
        }
    }
    Ok((model.classes[best], score))
}

pub fn classify_batch(features: ArrayView2<f64>, model: &SvmModel) -> Result<Vec<(TransitionLabel, f64)>> {
    features.outer_iter().map(|f| classify_segment(f, model)).collect()
}

/// Softmax argmax over class probabilities; ties resolve to the lower
/// class index.
pub fn softmax_label(probs: ArrayView1<f64>) -> (TransitionLabel, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (TransitionLabel::from_index(best).expect("class index"), probs[best])
}

/// Assigns segment labels from network outputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Labeler {
    Svm(SvmModel),
    Softmax,
}

impl Labeler {
    /// Network layer whose activations this labeler consumes.
    pub fn layer(&self) -> FeatureLayer {
        match self {
            Labeler::Svm(m) => m.layer,
            Labeler::Softmax => FeatureLayer::Fc8,
        }
    }

    /// `features` are the rows of [`Labeler::layer`]; `probs` the softmax.
    pub fn label(&self, features: ArrayView2<f64>, probs: ArrayView2<f64>) -> Result<Vec<(TransitionLabel, f64)>> {
        match self {
            Labeler::Svm(m) => classify_batch(features, m),
            Labeler::Softmax => Ok(probs.outer_iter().map(softmax_label).collect()),
        }
    }
}

/// Row-stacks `f32` network features as `f64`.
pub fn to_f64(features: &Array2<f32>) -> Array2<f64> {
    features.mapv(|v| v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<TransitionLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]];
        let classes = [TransitionLabel::NoTransition, TransitionLabel::Gradual, TransitionLabel::Sharp];
        let mut x = Array2::zeros((n * 3, 3));
        let mut y = Vec::new();
        for k in 0..3 {
            for i in 0..n {
                for d in 0..3 {
                    x[[k * n + i, d]] = centers[k][d] + rng.random_range(-1.0..1.0);
                }
                y.push(classes[k]);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(40, 1);
        let m = train_svm(x.view(), &y, FeatureLayer::Fc8, &SvmConfig::default()).unwrap();
        assert_eq!(m.training_accuracy, 1.0);
        let sharp_row = x.row(100);
        assert_eq!(classify_segment(sharp_row, &m).unwrap().0, TransitionLabel::Sharp);
        let out = classify_batch(x.view(), &m).unwrap();
        assert_eq!(out.len(), 120);
        assert!(out.iter().all(|(_, s)| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Array2::zeros((4, 2));
        let y = vec![TransitionLabel::Sharp; 4];
        assert!(matches!(
            train_svm(x.view(), &y, FeatureLayer::Fc8, &SvmConfig::default()),
            Err(Error::Degenerate(1))
        ));
    }

    #[test]
    fn ties_follow_class_order() {
        let model = SvmModel {
            schema: SVM_SCHEMA.into(),
            kernel: "linear".into(),
            layer: FeatureLayer::Fc8,
            width: 3,
            classes: vec![TransitionLabel::NoTransition, TransitionLabel::Gradual, TransitionLabel::Sharp],
            weights: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            biases: vec![0.0; 3],
            no_transition: NoTransitionMode::Class,
            counts: BTreeMap::new(),
            training_accuracy: 1.0,
            config: SvmConfig::default(),
        };
        let (label, score) = classify_segment(Array1::zeros(3).view(), &model).unwrap();
        assert_eq!(label, TransitionLabel::NoTransition);
        assert_eq!(score, 0.5);
        assert!(matches!(classify_segment(Array1::zeros(2).view(), &model), Err(Error::Shape(_))));
    }

    #[test]
    fn rejection_mode_falls_back_to_no_transition() {
        let (x, y) = blobs(30, 2);
        let cfg = SvmConfig {
            no_transition: NoTransitionMode::Rejection { threshold: 0.5 },
            ..SvmConfig::default()
        };
        let m = train_svm(x.view(), &y, FeatureLayer::Fc8, &cfg).unwrap();
        assert_eq!(m.classes, vec![TransitionLabel::Gradual, TransitionLabel::Sharp]);
        assert_eq!(classify_segment(x.row(0), &m).unwrap().0, TransitionLabel::NoTransition);
        assert_eq!(classify_segment(x.row(89), &m).unwrap().0, TransitionLabel::Sharp);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_simple_fn((300, 3), || rng.random_range(-1.0..1.0));
            let mut y: Vec<TransitionLabel> = (0..300).map(|i| TransitionLabel::ALL[i % 3]).collect();
            y.shuffle(&mut rng);
            let cfg = SvmConfig { seed, ..SvmConfig::default() };
            let m = train_svm(x.view(), &y, FeatureLayer::Fc8, &cfg).unwrap();
            assert!((m.training_accuracy - 1.0 / 3.0).abs() <= 0.1, "seed {seed}: {}", m.training_accuracy);
        }
    }

    #[test]
    fn model_round_trips() {
        let (x, y) = blobs(10, 3);
        let m = train_svm(x.view(), &y, FeatureLayer::Fc8, &SvmConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("svm.json");
        m.write(&p).unwrap();
        assert_eq!(SvmModel::read(&p).unwrap(), m);
        let again = train_svm(x.view(), &y, FeatureLayer::Fc8, &SvmConfig::default()).unwrap();
        assert_eq!(again, m);
    }
}
