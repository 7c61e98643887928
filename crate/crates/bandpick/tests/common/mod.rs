//! Shared helpers for the integration suites: an independent dual-QP
//! solver used as an oracle for the SMO trainer, plus small dataset
//! builders. The oracle is a projected-gradient method with an exact
//! projection onto the dual feasible set, written from first principles
//! so it shares no code with the trainer under test.

#![allow(dead_code)]

use bandpick::cube_io::{InoculationEnd, Split, StemRecord, Treatment};
use bandpick::features::{FeatureVector, Label};
use bandpick::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A stand-alone stem record for exercising patch tiling and labeling
/// without a dataset on disk.
pub fn mock_record(interior_mm: f64, end: InoculationEnd) -> StemRecord {
    StemRecord {
        stem_id: "prop_000".into(),
        cube_path: "prop_000.hsc".into(),
        genotype: "g0".into(),
        treatment: if interior_mm > 0.0 { Treatment::Inoculated } else { Treatment::Mock },
        dai: 3,
        interior_mm: Some(interior_mm),
        exterior_mm: None,
        dead_mm: None,
        replication: 1,
        split: Split::Train,
        inoculation_end: end,
    }
}

/// RBF kernel, recomputed here rather than imported so the oracle stays
/// independent of the code under test.
pub fn rbf(u: &[f64], v: &[f64], gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// Maximizes the SVM dual
///   W(a) = sum(a) - 1/2 * sum_ij a_i a_j y_i y_j K_ij
/// subject to 0 <= a_i <= c and sum_i a_i y_i = 0, by accelerated
/// projected gradient ascent. Labels must be +-1. Returns the achieved
/// dual objective.
///
/// The projection onto the feasible set is exact: for a point `v`, the
/// projection is `a_i = clamp(v_i - nu * y_i, 0, c)` where `nu` solves
/// `sum_i y_i a_i(nu) = 0`; that sum is non-increasing in `nu`, so `nu`
/// is found by bisection to machine precision.
pub fn dual_objective_oracle(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> f64 {
    let n = x.len();
    assert_eq!(y.len(), n, "labels must pair with points");
    assert!(y.iter().all(|&v| v == 1.0 || v == -1.0), "labels must be +-1");
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = y[i] * y[j] * rbf(&x[i], &x[j], gamma);
        }
    }

    // Lipschitz constant of the gradient: the largest eigenvalue of Q,
    // upper-bounded by power iteration (plus slack for safety).
    let lip = {
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 1.0;
        for _ in 0..200 {
            let w = mat_vec(&q, &v);
            lambda = norm(&w);
            if lambda == 0.0 {
                break;
            }
            for i in 0..n {
                v[i] = w[i] / lambda;
            }
        }
        (lambda * 1.05).max(1e-12)
    };
    let step = 1.0 / lip;

    let objective = |a: &[f64]| -> f64 {
        let qa = mat_vec(&q, a);
        a.iter().sum::<f64>() - 0.5 * a.iter().zip(&qa).map(|(ai, qi)| ai * qi).sum::<f64>()
    };

    // FISTA-style acceleration with a monotone guard: keep the best
    // feasible iterate seen, restart momentum when the step fails to
    // improve.
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut best = a.clone();
    let mut best_obj = objective(&a);
    let mut since_gain = 0usize;
    for _ in 0..200_000 {
        let qz = mat_vec(&q, &z);
        let v: Vec<f64> = (0..n).map(|i| z[i] + step * (1.0 - qz[i])).collect();
        let a_next = project(&v, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        z = (0..n)
            .map(|i| a_next[i] + momentum * (a_next[i] - a[i]))
            .collect();
        t = t_next;
        a = a_next;

        let obj = objective(&a);
        if obj > best_obj + 1e-15 * (1.0 + best_obj.abs()) {
            best_obj = obj;
            best = a.clone();
            since_gain = 0;
        } else {
            since_gain += 1;
            if since_gain == 50 {
                // momentum restart from the best point
                z = best.clone();
                a = best.clone();
                t = 1.0;
            }
            if since_gain >= 500 {
                break;
            }
        }
    }
    best_obj
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Exact projection onto `{a : 0 <= a <= c, y . a = 0}` (see
/// [`dual_objective_oracle`]).
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let bound = c + v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 1.0;
    let residual = |nu: f64| -> f64 {
        v.iter()
            .zip(y)
            .map(|(&vi, &yi)| yi * (vi - nu * yi).clamp(0.0, c))
            .sum()
    };
    let mut lo = -bound;
    let mut hi = bound;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    v.iter().zip(y).map(|(&vi, &yi)| (vi - nu * yi).clamp(0.0, c)).collect()
}

/// Wraps raw points as labeled feature vectors (+1 => infected).
pub fn as_features(x: &[Vec<f64>], y: &[f64]) -> Vec<FeatureVector<f64>> {
    x.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (values, &yi))| FeatureVector {
            values: values.clone(),
            label: if yi > 0.0 { Label::Infected } else { Label::Healthy },
            stem_id: format!("s{i:03}"),
            patch_index: 0,
        })
        .collect()
}

/// The 2-D XOR problem: four corners, opposite corners share a class.
pub fn xor4() -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        vec![-1.0, 1.0, 1.0, -1.0],
    )
}

/// Two Gaussian blobs of `n_per_class` points each, centers mirrored at
/// `+-center`, isotropic spread `sd`.
pub fn gaussian_blobs(
    n_per_class: usize,
    center: f64,
    sd: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, sd).expect("finite sd");
    let mut x = Vec::with_capacity(2 * n_per_class);
    let mut y = Vec::with_capacity(2 * n_per_class);
    for class in [1.0f64, -1.0] {
        for _ in 0..n_per_class {
            x.push(vec![
                class * center + normal.sample(&mut rng),
                class * center + normal.sample(&mut rng),
            ]);
            y.push(class);
        }
    }
    (x, y)
}

/// A disc of positive points inside an annulus of negative points; not
/// linearly separable, so the RBF kernel has to do real work.
pub fn disc_in_ring(n_per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream_rng(seed, 1);
    let mut x = Vec::with_capacity(2 * n_per_class);
    let mut y = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let inner = i < n_per_class;
        let radius = if inner {
            rng.random_range(0.0..0.6)
        } else {
            rng.random_range(1.1..1.6)
        };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        x.push(vec![radius * angle.cos(), radius * angle.sin()]);
        y.push(if inner { 1.0 } else { -1.0 });
    }
    (x, y)
}
