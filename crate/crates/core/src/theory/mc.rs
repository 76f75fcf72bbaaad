//! Monte-Carlo estimates of the class errors by direct sampling.
//!
//! Points are drawn coordinate by coordinate from the class Gaussians and
//! classified by `Σx + b`. The work is split into a fixed number of shards,
//! each with its own substream, so the estimate depends only on the seed.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{class_shifts, minus_spread, ErrorPair, Scenario, TheoryParams};
use crate::error::{Error, Result};
use crate::math::RngStream;

pub const MIN_SAMPLES: usize = 10_000;
const SHARDS: usize = 16;

/// Empirical errors with and without the scenario's score shifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub natural: ErrorPair,
    pub perturbed: ErrorPair,
    /// Binomial standard errors of the natural class errors.
    pub se_minus: f64,
    pub se_plus: f64,
    pub samples_per_class: usize,
}

/// Binomial standard error `√(p(1−p)/n)`.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn shard_sizes(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..SHARDS).map(move |s| (s, n / SHARDS + usize::from(s < n % SHARDS)))
}

/// Projected scores `Σx` for `n` points of each class; class `−1` first.
pub fn sample_scores(scenario: Scenario, p: &TheoryParams, n: usize, rng: RngStream) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim;
    let sd_minus = minus_spread(scenario, p) * p.sigma;
    let draw = |class: u64, mean: f64, sd: f64| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = shard_sizes(n)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(s, size)| {
                let mut r = rng.substream(class * SHARDS as u64 + s as u64).rng();
                (0..size)
                    .map(|_| {
                        (0..d)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut r);
                                mean + sd * z
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        parts.concat()
    };
    (draw(0, -p.eta, sd_minus), draw(1, p.eta, p.sigma))
}

pub fn mc_error_estimate(scenario: Scenario, p: &TheoryParams, b: f64, n: usize, rng: RngStream) -> Result<McEstimate> {
    if n < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLES} samples per class, got {n}"
        )));
    }
    p.validate()?;
    let (minus, plus) = sample_scores(scenario, p, n, rng);
    let (shift_minus, shift_plus) = class_shifts(scenario, p);
    let count = |scores: &[f64], wrong: &dyn Fn(f64) -> bool| scores.iter().filter(|&&s| wrong(s)).count();
    let nf = n as f64;
    let nat_minus = count(&minus, &|s| s + b > 0.0) as f64 / nf;
    let nat_plus = count(&plus, &|s| s + b < 0.0) as f64 / nf;
    let per_minus = count(&minus, &|s| s + b + shift_minus > 0.0) as f64 / nf;
    let per_plus = count(&plus, &|s| s + b + shift_plus < 0.0) as f64 / nf;
    Ok(McEstimate {
        natural: ErrorPair::new(nat_minus, nat_plus, p.gamma),
        perturbed: ErrorPair::new(per_minus, per_plus, p.gamma),
        se_minus: binomial_se(nat_minus, n),
        se_plus: binomial_se(nat_plus, n),
        samples_per_class: n,
    })
}

/// Bias minimising the empirical shifted objective `R(+1) + Γ·R(−1)` over a grid.
pub fn mc_grid_search_bias(
    scenario: Scenario,
    p: &TheoryParams,
    n: usize,
    rng: RngStream,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<f64> {
    if n < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLES} samples per class, got {n}"
        )));
    }
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::invalid("grid needs hi > lo and a positive step"));
    }
    p.validate()?;
    let (mut minus, mut plus) = sample_scores(scenario, p, n, rng);
    minus.sort_by(f64::total_cmp);
    plus.sort_by(f64::total_cmp);
    let (shift_minus, shift_plus) = class_shifts(scenario, p);
    let points = ((hi - lo) / step).round() as usize + 1;
    let mut best = (f64::INFINITY, lo);
    for i in 0..points {
        let b = lo + i as f64 * step;
        // class −1 wrong when s > −b − shift; class +1 wrong when s < −b − shift
        let wrong_minus = n - minus.partition_point(|&s| s <= -b - shift_minus);
        let wrong_plus = plus.partition_point(|&s| s < -b - shift_plus);
        let objective = wrong_plus as f64 + p.gamma * wrong_minus as f64;
        if objective < best.0 {
            best = (objective, b);
        }
    }
    Ok(best.1)
}
