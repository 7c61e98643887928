//! Classification metrics and stratified k-fold cross-validation.
//!
//! Infected is the positive class. Ratios with a zero denominator are
//! defined as 0 rather than NaN so that every report is totally ordered,
//! which the GA relies on when comparing fitness values.
//!
//! Cross-validation pools the held-out predictions of all k folds into one
//! confusion matrix (micro-averaging) instead of averaging per-fold scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, Label};
use crate::num::Real;
use crate::rng;
use crate::svm::{self, SvmConfig, SvmError};

/// Seed namespaces: fold shuffles and per-fold training.
const NS_SHUFFLE: u64 = 0xE0;
const NS_TRAIN: u64 = 0xE1;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("k must be at least 2, got {k}")]
    BadK { k: usize },
    #[error("{label:?} class has {have} {unit} unit(s), need at least {need} for {need}-fold CV")]
    InsufficientClassUnits { label: Label, unit: &'static str, have: usize, need: usize },
    #[error("fold {fold} leaves a single-class training complement")]
    SingleClassTraining { fold: usize },
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Binary confusion counts; infected is positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> Self {
        Self { true_pos, false_pos, false_neg, true_neg }
    }

    /// Records one (truth, prediction) pair.
    pub fn observe(&mut self, truth: Label, pred: Label) {
        match (truth, pred) {
            (Label::Infected, Label::Infected) => self.true_pos += 1,
            (Label::Healthy, Label::Infected) => self.false_pos += 1,
            (Label::Infected, Label::Healthy) => self.false_neg += 1,
            (Label::Healthy, Label::Healthy) => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Derives the six report metrics. Errors on an empty matrix.
    pub fn metrics(&self) -> Result<EvalReport, EvalError> {
        if self.total() == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        let tp = self.true_pos as f64;
        let fp = self.false_pos as f64;
        let fn_ = self.false_neg as f64;
        let tn = self.true_neg as f64;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Ok(EvalReport {
            matrix: *self,
            precision,
            recall,
            f1,
            infected_acc: recall * 100.0,
            healthy_acc: ratio(tn, tn + fp) * 100.0,
            overall_acc: ratio(tp + tn, self.total() as f64) * 100.0,
        })
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metrics of one evaluation: the raw counts plus the derived scores.
/// Accuracies are percentages; the rest are in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Recall of the infected class, percent.
    pub infected_acc: f64,
    /// Recall of the healthy class, percent.
    pub healthy_acc: f64,
    pub overall_acc: f64,
}

/// Grouping unit for cross-validation splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldUnit {
    /// Each patch is assigned independently.
    Patch,
    /// All patches of a stem share a fold, preventing leakage of
    /// stem-level appearance into the held-out folds.
    Stem,
}

/// Stratified fold assignment. Returns `k` disjoint index sets covering
/// `samples`. Within each class (at the chosen unit) the per-fold counts
/// differ by at most one; shuffling is deterministic given `seed`.
pub fn stratified_folds<F: Real>(
    samples: &[FeatureVector<F>],
    k: usize,
    unit: FoldUnit,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    use rand::seq::SliceRandom;

    if k < 2 {
        return Err(EvalError::BadK { k });
    }
    let mut folds = vec![Vec::new(); k];
    match unit {
        FoldUnit::Patch => {
            for (class_id, label) in [Label::Infected, Label::Healthy].into_iter().enumerate() {
                let mut idx: Vec<usize> = (0..samples.len())
                    .filter(|&i| samples[i].label == label)
                    .collect();
                if idx.len() < k {
                    return Err(EvalError::InsufficientClassUnits {
                        label,
                        unit: "patch",
                        have: idx.len(),
                        need: k,
                    });
                }
                let mut rng =
                    rng::stream_rng(rng::derive_seed2(seed, NS_SHUFFLE, class_id as u64), 0);
                idx.shuffle(&mut rng);
                for (pos, i) in idx.into_iter().enumerate() {
                    folds[pos % k].push(i);
                }
            }
        }
        FoldUnit::Stem => {
            // stems in first-occurrence order; a stem is infected when any
            // of its patches is
            let mut stem_order: Vec<&str> = Vec::new();
            let mut stem_of_sample = Vec::with_capacity(samples.len());
            for s in samples {
                let sid = match stem_order.iter().position(|&id| id == s.stem_id) {
                    Some(p) => p,
                    None => {
                        stem_order.push(&s.stem_id);
                        stem_order.len() - 1
                    }
                };
                stem_of_sample.push(sid);
            }
            let mut stem_infected = vec![false; stem_order.len()];
            for (s, &sid) in samples.iter().zip(&stem_of_sample) {
                if s.label == Label::Infected {
                    stem_infected[sid] = true;
                }
            }
            let mut fold_of_stem = vec![0usize; stem_order.len()];
            for (class_id, infected) in [true, false].into_iter().enumerate() {
                let mut stems: Vec<usize> = (0..stem_order.len())
                    .filter(|&sid| stem_infected[sid] == infected)
                    .collect();
                if stems.len() < k {
                    return Err(EvalError::InsufficientClassUnits {
                        label: if infected { Label::Infected } else { Label::Healthy },
                        unit: "stem",
                        have: stems.len(),
                        need: k,
                    });
                }
                let mut rng =
                    rng::stream_rng(rng::derive_seed2(seed, NS_SHUFFLE, class_id as u64), 1);
                stems.shuffle(&mut rng);
                for (pos, sid) in stems.into_iter().enumerate() {
                    fold_of_stem[sid] = pos % k;
                }
            }
            for (i, &sid) in stem_of_sample.iter().enumerate() {
                folds[fold_of_stem[sid]].push(i);
            }
        }
    }
    Ok(folds)
}

/// k-fold cross-validation of the SVM at the given configuration. Held-out
/// predictions of every fold pool into a single confusion matrix. The k
/// trainings are independent; each derives its own solver seed, so the
/// result does not depend on evaluation order.
pub fn kfold_cv<F: Real>(
    samples: &[FeatureVector<F>],
    k: usize,
    unit: FoldUnit,
    config: &SvmConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let folds = stratified_folds(samples, k, unit, seed)?;
    let mut matrix = ConfusionMatrix::default();
    for (f, fold) in folds.iter().enumerate() {
        let in_fold: Vec<bool> = {
            let mut m = vec![false; samples.len()];
            for &i in fold {
                m[i] = true;
            }
            m
        };
        let train_set: Vec<FeatureVector<F>> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold[*i])
            .map(|(_, s)| s.clone())
            .collect();
        let has = |l: Label| train_set.iter().any(|s| s.label == l);
        if !has(Label::Infected) || !has(Label::Healthy) {
            return Err(EvalError::SingleClassTraining { fold: f });
        }
        let model = svm::train(&train_set, config, rng::derive_seed2(seed, NS_TRAIN, f as u64))?;
        for &i in fold {
            matrix.observe(samples[i].label, model.predict(&samples[i].values));
        }
    }
    matrix.metrics()
}
