//! Soft-margin SVM with an RBF kernel, trained by sequential minimal
//! optimization (SMO).
//!
//! The solver keeps the full kernel matrix and an error cache in memory,
//! picks the second working-set index by the largest error difference with
//! seeded-random fallbacks, and maintains the bias incrementally, so
//! training is deterministic given the seed. Memory is O(n^2); adequate for
//! the intended scale of at most a few thousand low-dimensional samples.
//!
//! Labels map to `Infected = +1`, `Healthy = -1`. A decision value of
//! exactly zero predicts infected: when in doubt, flag the stem.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, Label};
use crate::num::Real;

/// Dual coefficients below this magnitude are dropped from the model.
const PRUNE_EPS: f64 = 1e-8;
/// Minimum relative change for a pair step to count as progress.
const STEP_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains only the {0:?} class")]
    SingleClass(Label),
    #[error("sample {index} has {got} feature(s), expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("sample {index}, feature {dim} is not finite")]
    NonFiniteFeature { index: usize, dim: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("support vector and coefficient counts differ: {svs} vs {coefs}")]
    CoefMismatch { svs: usize, coefs: usize },
}

/// SMO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Box constraint on the dual variables.
    pub c: f64,
    /// RBF width: K(u, v) = exp(-gamma * |u - v|^2).
    pub gamma: f64,
    /// KKT tolerance.
    pub tol: f64,
    /// Consecutive sweeps without an update before giving up.
    pub max_passes: usize,
    /// Cap on examination steps; `None` means 100 * n_samples.
    pub max_iters: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1000.0, gamma: 1.0, tol: 1e-3, max_passes: 10, max_iters: None }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(SvmError::BadConfig("c must be positive and finite"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(SvmError::BadConfig("gamma must be positive and finite"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(SvmError::BadConfig("tol must be positive and finite"));
        }
        if self.max_passes == 0 {
            return Err(SvmError::BadConfig("max_passes must be at least 1"));
        }
        Ok(())
    }
}

/// RBF kernel value for two points.
#[inline]
pub fn rbf_kernel<F: Real>(u: &[F], v: &[F], gamma: F) -> F {
    debug_assert_eq!(u.len(), v.len());
    let mut d2 = F::zero();
    for (&a, &b) in u.iter().zip(v) {
        let d = a - b;
        d2 = d2 + d * d;
    }
    (-gamma * d2).exp()
}

/// A trained model: retained support vectors, their signed dual
/// coefficients (alpha_i * y_i) and the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct SvmModel<F: Real> {
    support_vectors: Vec<Vec<F>>,
    dual_coefs: Vec<F>,
    bias: F,
    config: SvmConfig,
    /// False when training stopped at the iteration cap instead of the
    /// KKT conditions.
    converged: bool,
}

impl<F: Real> SvmModel<F> {
    /// Rebuilds a model from raw parts, e.g. after deserialization from an
    /// external source. Validates shape, not optimality.
    pub fn from_parts(
        support_vectors: Vec<Vec<F>>,
        dual_coefs: Vec<F>,
        bias: F,
        config: SvmConfig,
    ) -> Result<Self, SvmError> {
        config.validate()?;
        if support_vectors.len() != dual_coefs.len() {
            return Err(SvmError::CoefMismatch {
                svs: support_vectors.len(),
                coefs: dual_coefs.len(),
            });
        }
        if let Some(first) = support_vectors.first() {
            let expected = first.len();
            for (index, sv) in support_vectors.iter().enumerate() {
                if sv.len() != expected {
                    return Err(SvmError::DimensionMismatch {
                        index,
                        expected,
                        got: sv.len(),
                    });
                }
            }
        }
        Ok(Self { support_vectors, dual_coefs, bias, config, converged: true })
    }

    pub fn support_vectors(&self) -> &[Vec<F>] {
        &self.support_vectors
    }

    pub fn dual_coefs(&self) -> &[F] {
        &self.dual_coefs
    }

    pub fn bias(&self) -> F {
        self.bias
    }

    pub fn config(&self) -> &SvmConfig {
        &self.config
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn n_support(&self) -> usize {
        self.support_vectors.len()
    }

    /// Signed margin of a point.
    ///
    /// Panics if `x` has a different dimension than the support vectors.
    pub fn decision(&self, x: &[F]) -> F {
        let gamma = F::from_f64_lossy(self.config.gamma);
        let mut acc = self.bias;
        for (sv, &coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            assert_eq!(sv.len(), x.len(), "feature dimension mismatch");
            acc = acc + coef * rbf_kernel(sv, x, gamma);
        }
        acc
    }

    /// Class of a point; a zero margin counts as infected.
    pub fn predict(&self, x: &[F]) -> Label {
        if self.decision(x) >= F::zero() {
            Label::Infected
        } else {
            Label::Healthy
        }
    }

    /// Dual objective achieved by the retained coefficients:
    /// sum(alpha) - 1/2 * sum_ij coef_i coef_j K_ij.
    pub fn dual_objective(&self) -> f64 {
        let gamma = F::from_f64_lossy(self.config.gamma);
        let s = self.support_vectors.len();
        let mut obj = 0.0;
        for i in 0..s {
            obj += self.dual_coefs[i].as_f64().abs();
            for j in 0..s {
                let k = rbf_kernel(&self.support_vectors[i], &self.support_vectors[j], gamma);
                obj -= 0.5
                    * self.dual_coefs[i].as_f64()
                    * self.dual_coefs[j].as_f64()
                    * k.as_f64();
            }
        }
        obj
    }
}

fn label_sign<F: Real>(label: Label) -> F {
    match label {
        Label::Infected => F::one(),
        Label::Healthy => -F::one(),
    }
}

/// Trains on labeled feature vectors. Deterministic given `seed`; the seed
/// only drives the working-set fallback scans.
pub fn train<F: Real>(
    samples: &[FeatureVector<F>],
    config: &SvmConfig,
    seed: u64,
) -> Result<SvmModel<F>, SvmError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let dim = samples[0].values.len();
    for (index, s) in samples.iter().enumerate() {
        if s.values.len() != dim {
            return Err(SvmError::DimensionMismatch {
                index,
                expected: dim,
                got: s.values.len(),
            });
        }
        for (d, v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SvmError::NonFiniteFeature { index, dim: d });
            }
        }
    }
    if samples.iter().all(|s| s.label == Label::Infected) {
        return Err(SvmError::SingleClass(Label::Infected));
    }
    if samples.iter().all(|s| s.label == Label::Healthy) {
        return Err(SvmError::SingleClass(Label::Healthy));
    }

    let x: Vec<&[F]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let y: Vec<F> = samples.iter().map(|s| label_sign(s.label)).collect();
    let mut solver = Solver::new(&x, &y, config, seed);
    let converged = solver.solve();

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    let prune = F::from_f64_lossy(PRUNE_EPS);
    for i in 0..x.len() {
        if solver.alpha[i].abs() > prune {
            support_vectors.push(x[i].to_vec());
            dual_coefs.push(solver.alpha[i] * y[i]);
        }
    }
    Ok(SvmModel {
        support_vectors,
        dual_coefs,
        bias: solver.b,
        config: *config,
        converged,
    })
}

struct Solver<'a, F: Real> {
    y: &'a [F],
    kernel: Vec<F>,
    n: usize,
    alpha: Vec<F>,
    errors: Vec<F>,
    b: F,
    c: F,
    tol: F,
    max_passes: usize,
    max_iters: usize,
    rng: ChaCha8Rng,
}

impl<'a, F: Real> Solver<'a, F> {
    fn new(x: &[&[F]], y: &'a [F], config: &SvmConfig, seed: u64) -> Self {
        let n = x.len();
        let gamma = F::from_f64_lossy(config.gamma);
        let mut kernel = vec![F::zero(); n * n];
        for i in 0..n {
            kernel[i * n + i] = F::one();
            for j in 0..i {
                let k = rbf_kernel(x[i], x[j], gamma);
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
            }
        }
        Self {
            y,
            kernel,
            n,
            alpha: vec![F::zero(); n],
            errors: y.iter().map(|&yi| -yi).collect(),
            b: F::zero(),
            c: F::from_f64_lossy(config.c),
            tol: F::from_f64_lossy(config.tol),
            max_passes: config.max_passes,
            max_iters: config.max_iters.unwrap_or(100 * n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    fn k(&self, i: usize, j: usize) -> F {
        self.kernel[i * self.n + j]
    }

    fn non_bound(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.alpha[i] > F::zero() && self.alpha[i] < self.c)
            .collect()
    }

    /// Runs the outer SMO loop. Returns false when stopped by the
    /// iteration cap rather than a clean no-violation pass.
    fn solve(&mut self) -> bool {
        let mut examine_all = true;
        let mut num_changed = 1usize;
        let mut quiet_passes = 0usize;
        let mut iters = 0usize;
        while num_changed > 0 || examine_all {
            num_changed = 0;
            let targets: Vec<usize> =
                if examine_all { (0..self.n).collect() } else { self.non_bound() };
            for i in targets {
                if iters >= self.max_iters {
                    return false;
                }
                iters += 1;
                num_changed += self.examine(i);
            }
            if num_changed == 0 {
                quiet_passes += 1;
                if quiet_passes >= self.max_passes {
                    return true;
                }
            } else {
                quiet_passes = 0;
            }
            if examine_all {
                examine_all = false;
            } else if num_changed == 0 {
                examine_all = true;
            }
        }
        true
    }

    fn examine(&mut self, i2: usize) -> usize {
        let y2 = self.y[i2];
        let a2 = self.alpha[i2];
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates = (r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > F::zero());
        if !violates {
            return 0;
        }

        // best |E1 - E2| among non-bound points
        let non_bound = self.non_bound();
        if non_bound.len() > 1 {
            let mut best = None;
            let mut best_gap = -F::one();
            for &i1 in &non_bound {
                let gap = (self.errors[i1] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i1);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2) {
                    return 1;
                }
            }
        }
        // all non-bound points, starting at a random position
        if !non_bound.is_empty() {
            let start = self.rng.random_range(0..non_bound.len());
            for off in 0..non_bound.len() {
                let i1 = non_bound[(start + off) % non_bound.len()];
                if self.take_step(i1, i2) {
                    return 1;
                }
            }
        }
        // the whole training set, starting at a random position
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.take_step(i1, i2) {
                return 1;
            }
        }
        0
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;

        let (lo, hi) = if y1 != y2 {
            let d = a2 - a1;
            (d.max(F::zero()), (self.c + d).min(self.c))
        } else {
            let t = a1 + a2;
            ((t - self.c).max(F::zero()), t.min(self.c))
        };
        if lo >= hi {
            return false;
        }

        let k11 = self.k(i1, i1);
        let k12 = self.k(i1, i2);
        let k22 = self.k(i2, i2);
        let eta = k11 + k22 - F::from_f64_lossy(2.0) * k12;

        let step_eps = F::from_f64_lossy(STEP_EPS);
        let a2_new = if eta > F::zero() {
            (a2 + y2 * (e1 - e2) / eta).max(lo).min(hi)
        } else {
            // flat direction: evaluate the objective at both bounds
            let f1 = y1 * e1 - a1 * k11 - s * a2 * k12;
            let f2 = y2 * e2 - s * a1 * k12 - a2 * k22;
            let l1 = a1 + s * (a2 - lo);
            let h1 = a1 + s * (a2 - hi);
            let half = F::from_f64_lossy(0.5);
            let obj_lo =
                l1 * f1 + lo * f2 + half * l1 * l1 * k11 + half * lo * lo * k22 + s * lo * l1 * k12;
            let obj_hi =
                h1 * f1 + hi * f2 + half * h1 * h1 * k11 + half * hi * hi * k22 + s * hi * h1 * k12;
            if obj_lo < obj_hi - step_eps {
                lo
            } else if obj_lo > obj_hi + step_eps {
                hi
            } else {
                return false;
            }
        };

        if (a2_new - a2).abs() < step_eps * (a2_new + a2 + step_eps) {
            return false;
        }
        let a1_new = a1 + s * (a2 - a2_new);

        let d1 = y1 * (a1_new - a1);
        let d2 = y2 * (a2_new - a2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let b_new = if a1_new > F::zero() && a1_new < self.c {
            b1
        } else if a2_new > F::zero() && a2_new < self.c {
            b2
        } else {
            (b1 + b2) / F::from_f64_lossy(2.0)
        };
        let db = b_new - self.b;

        for k in 0..self.n {
            self.errors[k] =
                self.errors[k] + d1 * self.k(i1, k) + d2 * self.k(i2, k) + db;
        }
        self.alpha[i1] = a1_new;
        self.alpha[i2] = a2_new;
        self.b = b_new;
        true
    }
}
