//! Finite-difference verification of the analytic loss gradients.
//!
//! Relative error of a component is `|a - n| / max(|a|, |n|, 1)`, where `a` is
//! the analytic and `n` the central-difference value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{
    clustering_unchecked, dycl_unchecked, norm, triplet_unchecked, LossConfig, MarginSchedule,
};

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dycl,
    Clustering,
    Triplet,
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn split(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// One random problem: parameters flattened, loss closure and analytic gradient.
fn dycl_trial(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let dim = rng.random_range(3..8);
    let refs_n = rng.random_range(3..9);
    let num_scales = 3;
    let margins = vec![0.3, 0.2, 0.1];
    let config = LossConfig {
        tau: rng.random_range(1.0..32.0),
        margins: MarginSchedule::new(margins).expect("valid margins"),
        ..LossConfig::default()
    };
    let levels: Vec<usize> = (0..refs_n)
        .map(|i| {
            if i == 0 {
                0
            } else if i == 1 {
                num_scales
            } else {
                rng.random_range(0..=num_scales)
            }
        })
        .collect();
    let positives: Vec<Vec<usize>> = (0..num_scales)
        .map(|l| (0..refs_n).filter(|&i| levels[i] <= l).collect())
        .collect();
    let negatives: Vec<usize> = (0..refs_n).filter(|&i| levels[i] == num_scales).collect();
    let mut flat = unit(rng, dim);
    for _ in 0..refs_n {
        flat.extend(unit(rng, dim));
    }
    let loss = |p: &[f64]| {
        let refs = split(&p[dim..], dim);
        dycl_unchecked(&p[..dim], &refs, &positives, &negatives, &config).loss
    };
    let out = dycl_unchecked(
        &flat[..dim],
        &split(&flat[dim..], dim),
        &positives,
        &negatives,
        &config,
    );
    let mut analytic = out.anchor_grad;
    analytic.extend(out.ref_grads.into_iter().flatten());
    max_relative_error(&analytic, &central_difference(loss, &flat, h))
}

fn clustering_trial(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let dim = rng.random_range(3..8);
    let classes = rng.random_range(2..7);
    let target = rng.random_range(0..classes);
    let scale = rng.random_range(0.5..16.0);
    let mut flat = unit(rng, dim);
    for _ in 0..classes {
        flat.extend(unit(rng, dim));
    }
    let loss =
        |p: &[f64]| clustering_unchecked(&p[..dim], &split(&p[dim..], dim), target, scale).loss;
    let out = clustering_unchecked(&flat[..dim], &split(&flat[dim..], dim), target, scale);
    let mut analytic = out.feature_grad;
    analytic.extend(out.proxy_grads.into_iter().flatten());
    max_relative_error(&analytic, &central_difference(loss, &flat, h))
}

fn triplet_trial(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let dim = rng.random_range(3..8);
    let margin = rng.random_range(0.05..0.5);
    // keep away from the hinge kink, where the loss is not differentiable
    let flat = loop {
        let mut v = unit(rng, dim);
        v.extend(unit(rng, dim));
        v.extend(unit(rng, dim));
        let (a, p, n) = (&v[..dim], &v[dim..2 * dim], &v[2 * dim..]);
        let value = margin - crate::losses::dot(a, p) + crate::losses::dot(a, n);
        if value.abs() > 1e-3 {
            break v;
        }
    };
    let loss = |q: &[f64]| triplet_unchecked(&q[..dim], &q[dim..2 * dim], &q[2 * dim..], margin).0;
    let (_, grads) = triplet_unchecked(&flat[..dim], &flat[dim..2 * dim], &flat[2 * dim..], margin);
    let analytic: Vec<f64> = grads.into_iter().flatten().collect();
    max_relative_error(&analytic, &central_difference(loss, &flat, h))
}

/// Largest relative error over `trials` random problems of the given loss.
pub fn finite_difference_check(kind: LossKind, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| match kind {
            LossKind::Dycl => dycl_trial(&mut rng, DEFAULT_STEP),
            LossKind::Clustering => clustering_trial(&mut rng, DEFAULT_STEP),
            LossKind::Triplet => triplet_trial(&mut rng, DEFAULT_STEP),
        })
        .fold(0.0, f64::max)
}
