use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MopError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1e-5
}

fn default_eta() -> f64 {
    0.2
}

fn default_epochs() -> usize {
    100
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lambda: default_lambda(),
            eta: default_eta(),
            epochs: default_epochs(),
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(MopError::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(MopError::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(MopError::invalid("epochs must be >= 1"));
        }
        Ok(())
    }

    /// Step size during `epoch` (0-based).
    pub fn step(&self, epoch: usize) -> f64 {
        self.eta / (1.0 + epoch as f64 * self.lambda * self.eta)
    }
}

/// One-vs-all linear classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<String>,
    /// `classes.len()` rows of feature-dimension weights.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub scores: Vec<f64>,
}

/// Per-epoch regularized hinge objective of each one-vs-all problem,
/// evaluated after the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub objective: Vec<Vec<f64>>,
}

impl TrainTrace {
    /// Sum over classes of the objective after `epoch` (0-based).
    pub fn total(&self, epoch: usize) -> f64 {
        self.objective.iter().map(|o| o[epoch]).sum()
    }
}

/// Trains one-vs-all hinge-loss classifiers with SGD.
///
/// Classes are the distinct labels in sorted order. Each problem starts at
/// zero and visits the samples in an order reshuffled every epoch by an RNG
/// seeded with `cfg.seed` (the same order for every class). Sample `x` is
/// augmented with a constant 1 so the bias is learned and regularized like
/// any other weight. The update at step size `η_t` is
/// `w ← (1 − η_t λ) w + η_t y x` when `y wᵀx < 1`, else `w ← (1 − η_t λ) w`.
pub fn svm_train<R, S>(features: &[R], labels: &[S], cfg: &SgdConfig) -> Result<SvmModel>
where
    R: AsRef<[f64]> + Sync,
    S: AsRef<str>,
{
    svm_train_traced(features, labels, cfg).map(|(m, _)| m)
}

pub fn svm_train_traced<R, S>(
    features: &[R],
    labels: &[S],
    cfg: &SgdConfig,
) -> Result<(SvmModel, TrainTrace)>
where
    R: AsRef<[f64]> + Sync,
    S: AsRef<str>,
{
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(MopError::invalid(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.len() < 2 {
        return Err(MopError::invalid("SVM training needs at least 2 samples"));
    }
    let dim = features[0].as_ref().len();
    if let Some(i) = features.iter().position(|f| f.as_ref().len() != dim) {
        return Err(MopError::invalid(format!(
            "feature row {i} has length {}, expected {dim}",
            features[i].as_ref().len()
        )));
    }
    if features.iter().any(|f| f.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(MopError::invalid("feature rows contain non-finite values"));
    }
    let mut classes: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(MopError::invalid(format!(
            "SVM training needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let targets: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).unwrap())
        .collect();

    let mut rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let orders: Vec<Vec<usize>> = (0..cfg.epochs)
        .map(|_| {
            order.shuffle(&mut rng);
            order.clone()
        })
        .collect();

    let per_class: Vec<(Vec<f64>, Vec<f64>)> = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = targets.iter().map(|&t| if t == c { 1.0 } else { -1.0 }).collect();
            train_binary(features, &y, &orders, cfg)
        })
        .collect();

    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut objective = Vec::with_capacity(classes.len());
    for (mut w, obj) in per_class {
        let b = w.pop().unwrap();
        if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(MopError::Numerical("SVM weights diverged".into()));
        }
        weights.push(w);
        biases.push(b);
        objective.push(obj);
    }
    Ok((SvmModel { classes, weights, biases }, TrainTrace { objective }))
}

fn train_binary<R: AsRef<[f64]>>(
    features: &[R],
    y: &[f64],
    orders: &[Vec<usize>],
    cfg: &SgdConfig,
) -> (Vec<f64>, Vec<f64>) {
    let dim = features[0].as_ref().len();
    let mut w = vec![0.0; dim + 1];
    let mut history = Vec::with_capacity(orders.len());
    for (epoch, order) in orders.iter().enumerate() {
        let eta = cfg.step(epoch);
        let shrink = 1.0 - eta * cfg.lambda;
        for &i in order {
            let x = features[i].as_ref();
            let margin = y[i] * augmented_dot(&w, x);
            if shrink != 1.0 {
                w.iter_mut().for_each(|v| *v *= shrink);
            }
            if margin < 1.0 {
                let step = eta * y[i];
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += step * xj;
                }
                w[dim] += step;
            }
        }
        history.push(objective(&w, features, y, cfg.lambda));
    }
    (w, history)
}

fn augmented_dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

/// `λ/2 ‖w‖² + mean hinge`, with `w` including the bias weight.
fn objective<R: AsRef<[f64]>>(w: &[f64], features: &[R], y: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = features
        .iter()
        .zip(y)
        .map(|(x, &yi)| (1.0 - yi * augmented_dot(w, x.as_ref())).max(0.0))
        .sum();
    reg + hinge / features.len() as f64
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// `wᵀx + b` for every class.
    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.dim() {
            return Err(MopError::invalid(format!(
                "feature has length {}, classifier expects {}",
                feature.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(feature).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect())
    }

    /// Fraction of rows whose predicted label equals the given one.
    pub fn accuracy<R: AsRef<[f64]>, S: AsRef<str>>(&self, features: &[R], labels: &[S]) -> Result<f64> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(MopError::invalid(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        let mut hits = 0usize;
        for (f, l) in features.iter().zip(labels) {
            let p = svm_predict(self, f.as_ref())?;
            if self.classes[p.class_index] == l.as_ref() {
                hits += 1;
            }
        }
        Ok(hits as f64 / features.len() as f64)
    }
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn svm_predict(model: &SvmModel, feature: &[f64]) -> Result<Prediction> {
    let scores = model.scores(feature)?;
    Ok(Prediction { class_index: argmax(&scores), scores })
}

/// Averages per-class scores over the ten crops of one image.
pub fn ten_crop_predict<R: AsRef<[f64]>>(model: &SvmModel, crops: &[R]) -> Result<Prediction> {
    if crops.len() != 10 {
        return Err(MopError::invalid(format!(
            "ten-crop prediction needs 10 feature rows, got {}",
            crops.len()
        )));
    }
    let per_crop = crops
        .iter()
        .map(|c| model.scores(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_scores(&per_crop))
}

pub(crate) fn average_scores(per_crop: &[Vec<f64>]) -> Prediction {
    let n = per_crop.len() as f64;
    let mut scores = vec![0.0; per_crop[0].len()];
    for s in per_crop {
        scores.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    scores.iter_mut().for_each(|s| *s /= n);
    Prediction { class_index: argmax(&scores), scores }
}
