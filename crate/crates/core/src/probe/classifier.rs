// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear hinge-loss classifier with k-fold cross-validation.
//!
//! Training is full-batch subgradient descent from zero with step
//! `lr / t`, an L2 penalty on the weights only, and features standardized
//! with the training fold's mean and population standard deviation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::tensor::dot;

/// Standard deviations below this leave the feature centred but unscaled.
const MIN_STD: f64 = 1e-12;

/// One training example.
///
/// Points sharing a `group` always land in the same fold, so both halves
/// of a caption/non-caption pair are held out together.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: bool,
    pub group: usize,
}

/// Training and cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierParams {
    pub folds: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            folds: 2,
            iterations: 500,
            learning_rate: 0.1,
            l2: 1e-2,
            seed: 0,
        }
    }
}

impl ClassifierParams {
    /// # Errors
    ///
    /// [`Error::Config`] for unusable settings.
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(config("cross-validation needs at least 2 folds"));
        }
        if self.iterations == 0 {
            return Err(config("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(config("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Trained weights and bias; predicts positive iff `w·x + b > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    /// Fits on `xs` with labels `ys`.
    pub fn fit(xs: &[Vec<f64>], ys: &[bool], params: &ClassifierParams) -> Self {
        let dim = xs.first().map_or(0, Vec::len);
        let n = xs.len() as f64;
        let signs: Vec<f64> = ys.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut gw = vec![0.0; dim];
        for t in 1..=params.iterations {
            gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = params.l2 * wi);
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(&signs) {
                if y * (dot(&w, x) + b) < 1.0 {
                    for (g, xi) in gw.iter_mut().zip(x) {
                        *g -= y * xi / n;
                    }
                    gb -= y / n;
                }
            }
            let eta = params.learning_rate / t as f64;
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= eta * g);
            b -= eta * gb;
        }
        Self { weights: w, bias: b }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

/// Per-feature affine map fitted on a training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[&[f64]]) -> Self {
        let dim = xs.first().map_or(0, |x| x.len());
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            mean.iter_mut().zip(*x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(*x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Assigns every point to a fold.
///
/// Groups are bucketed by their `(positives, negatives)` composition,
/// shuffled within each bucket with `seed`, and dealt round-robin. Singleton
/// groups therefore give a stratified split and caption/non-caption pairs
/// give a pair-grouped one.
///
/// # Errors
///
/// [`Error::Config`] for fewer than 2 folds.
pub fn fold_assignment(points: &[LabeledPoint], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(config("cross-validation needs at least 2 folds"));
    }
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in points {
        let e = groups.entry(p.group).or_default();
        if p.label {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (g, sig) in groups {
        buckets.entry(sig).or_default().push(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut next = 0;
    for members in buckets.values_mut() {
        members.shuffle(&mut rng);
        for &g in members.iter() {
            fold_of.insert(g, next % folds);
            next += 1;
        }
    }
    Ok(points.iter().map(|p| fold_of[&p.group]).collect())
}

/// Mean held-out accuracy over the folds.
///
/// # Errors
///
/// [`Error::EmptyDataset`] for no points, [`Error::Shape`] for ragged
/// features, [`Error::ClassImbalance`] when a class has fewer than 2 points
/// or a fold's training or test part misses a class.
pub fn train_head_classifier(points: &[LabeledPoint], params: &ClassifierParams) -> Result<f64> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyDataset("no points to classify".into()));
    }
    let dim = points[0].features.len();
    if points.iter().any(|p| p.features.len() != dim) {
        return Err(shape("points have different feature lengths"));
    }
    let pos = points.iter().filter(|p| p.label).count();
    let neg = points.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::ClassImbalance(format!(
            "need at least 2 points per class, got {pos} positive and {neg} negative"
        )));
    }
    let folds = fold_assignment(points, params.folds, params.seed)?;
    let mut total = 0.0;
    for f in 0..params.folds {
        let (train, test): (Vec<_>, Vec<_>) = points.iter().zip(&folds).partition(|(_, &pf)| pf != f);
        for (part, name) in [(&train, "training"), (&test, "test")] {
            let p = part.iter().filter(|(pt, _)| pt.label).count();
            if p == 0 || p == part.len() {
                return Err(Error::ClassImbalance(format!(
                    "fold {f} {name} part has a single class"
                )));
            }
        }
        let raw: Vec<&[f64]> = train.iter().map(|(p, _)| p.features.as_slice()).collect();
        let st = Standardizer::fit(&raw);
        let xs: Vec<Vec<f64>> = raw.iter().map(|x| st.apply(x)).collect();
        let ys: Vec<bool> = train.iter().map(|(p, _)| p.label).collect();
        let svm = LinearSvm::fit(&xs, &ys, params);
        let correct = test
            .iter()
            .filter(|(p, _)| svm.predict(&st.apply(&p.features)) == p.label)
            .count();
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / params.folds as f64)
}
