//! Imbalanced binary-Gaussian model under bounded logit shifts.
//!
//! Class `+1` is `N(θ, σ²I)` and class `−1` is `N(−θ, (Kσ)²I)` with
//! `θ = [η, …, η]`, prior ratio `Γ = P₋/P₊`, and the linear classifier
//! `sign(Σx + b)`. Each class score is shifted by its worst (first type) or
//! best (second type) case within a bound before the error is measured, and
//! the bias `b*` minimising the prior-weighted shifted error is used to report
//! the unshifted class errors.
//!
//! Three scenarios are covered:
//!
//! - [`Scenario::FirstTypeBoth`]: equal variances; class `−1` bound `ε`,
//!   class `+1` bound `ερ₊`, both first type.
//! - [`Scenario::SecondTypeNegative`]: equal variances; class `+1` first type
//!   with bound `ε`, class `−1` second type with bound `ερ₋`.
//! - [`Scenario::UnequalVariance`]: `K > 1`; class `−1` bound `ερ₋`, class
//!   `+1` bound `ερ₊`, both first type.

pub mod mc;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::std_normal_cdf as phi;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    FirstTypeBoth,
    SecondTypeNegative,
    UnequalVariance,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::FirstTypeBoth,
        Scenario::SecondTypeNegative,
        Scenario::UnequalVariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FirstTypeBoth => "first-type",
            Scenario::SecondTypeNegative => "second-type",
            Scenario::UnequalVariance => "unequal-variance",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown scenario {s:?}; expected first-type, second-type or unequal-variance"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub dim: usize,
    pub eta: f64,
    pub sigma: f64,
    /// Prior ratio `P₋/P₊`.
    pub gamma: f64,
    /// Standard-deviation ratio `σ₋/σ₊`.
    pub k: f64,
    pub epsilon: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

impl TheoryParams {
    /// Checks ranges that every scenario shares.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        for (name, v) in [("eta", self.eta), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be at least 1, got {}", self.gamma)));
        }
        if !(self.k >= 1.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!("k must be at least 1, got {}", self.k)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("rho_plus", self.rho_plus),
            ("rho_minus", self.rho_minus),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `√d·σ`, the standard deviation of the class `+1` score.
    pub fn score_scale(&self) -> f64 {
        (self.dim as f64).sqrt() * self.sigma
    }

    fn d_eta(&self) -> f64 {
        self.dim as f64 * self.eta
    }

    pub fn with_rho_plus(self, rho_plus: f64) -> Self {
        Self { rho_plus, ..self }
    }

    pub fn with_rho_minus(self, rho_minus: f64) -> Self {
        Self { rho_minus, ..self }
    }
}

/// Class-conditional errors with both ways of combining them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPair {
    pub err_minus: f64,
    pub err_plus: f64,
    /// `(err_plus + Γ·err_minus)/(1 + Γ)`
    pub total: f64,
    /// `(err_plus + err_minus)/2`
    pub mean: f64,
}

impl ErrorPair {
    pub fn new(err_minus: f64, err_plus: f64, gamma: f64) -> Self {
        Self {
            err_minus,
            err_plus,
            total: (err_plus + gamma * err_minus) / (1.0 + gamma),
            mean: 0.5 * (err_plus + err_minus),
        }
    }
}

/// Score shifts applied to class `−1` and class `+1` under a scenario.
///
/// A positive shift on class `−1` and a negative shift on class `+1` push
/// the class towards the boundary (first type).
pub fn class_shifts(scenario: Scenario, p: &TheoryParams) -> (f64, f64) {
    let e = p.epsilon;
    match scenario {
        Scenario::FirstTypeBoth => (e, -e * p.rho_plus),
        Scenario::SecondTypeNegative => (-e * p.rho_minus, -e),
        Scenario::UnequalVariance => (e * p.rho_minus, -e * p.rho_plus),
    }
}

/// Ratio of the class `−1` score spread to the class `+1` spread.
pub fn minus_spread(scenario: Scenario, p: &TheoryParams) -> f64 {
    match scenario {
        Scenario::UnequalVariance => p.k,
        _ => 1.0,
    }
}

/// Scenario-specific preconditions: every shift smaller than `η`, `K = 1` for
/// the equal-variance scenarios and `K > 1` otherwise.
pub fn check_feasible(scenario: Scenario, p: &TheoryParams) -> Result<()> {
    p.validate()?;
    match scenario {
        Scenario::UnequalVariance => {
            if p.k <= 1.0 {
                return Err(Error::Singular("unequal-variance scenario needs k > 1".into()));
            }
        }
        _ => {
            if p.k != 1.0 {
                return Err(Error::invalid(format!(
                    "{scenario} scenario assumes k = 1, got {}",
                    p.k
                )));
            }
        }
    }
    let (minus, plus) = class_shifts(scenario, p);
    for (name, shift) in [("class -1", minus), ("class +1", plus)] {
        if shift.abs() >= p.eta {
            return Err(Error::Infeasible(format!(
                "{name} shift {} is not below eta {}",
                shift.abs(),
                p.eta
            )));
        }
    }
    Ok(())
}

/// Prior-weighted shifted error `Γ·R(−1) + R(+1)` of the classifier with bias `b`.
pub fn perturbed_objective(scenario: Scenario, p: &TheoryParams, b: f64) -> f64 {
    let (minus, plus) = class_shifts(scenario, p);
    let s = p.score_scale();
    let k = minus_spread(scenario, p);
    p.gamma * phi((b + minus - p.d_eta()) / (k * s)) + phi((-p.d_eta() - b - plus) / s)
}

/// Unshifted class errors of the classifier with bias `b`.
pub fn natural_errors(scenario: Scenario, p: &TheoryParams, b: f64) -> ErrorPair {
    let s = p.score_scale();
    let k = minus_spread(scenario, p);
    ErrorPair::new(phi((b - p.d_eta()) / (k * s)), phi(-(p.d_eta() + b) / s), p.gamma)
}

pub fn optimal_bias(scenario: Scenario, p: &TheoryParams) -> Result<f64> {
    check_feasible(scenario, p)?;
    let e = p.epsilon;
    let dsig2 = p.dim as f64 * p.sigma * p.sigma;
    match scenario {
        Scenario::FirstTypeBoth => {
            let denom = e - 2.0 * p.d_eta() + e * p.rho_plus;
            if denom == 0.0 {
                return Err(Error::Singular("bias denominator vanishes".into()));
            }
            Ok(e * (p.rho_plus - 1.0) / 2.0 + dsig2 * p.gamma.ln() / denom)
        }
        Scenario::SecondTypeNegative => {
            let a = first_second_a(p)?;
            Ok(p.score_scale() * p.gamma.ln() / a + e * (1.0 + p.rho_minus) / 2.0)
        }
        Scenario::UnequalVariance => {
            let k2 = p.k * p.k;
            let x = e * p.rho_minus + e * p.rho_plus - 2.0 * p.d_eta();
            let radicand = x * x + 2.0 * dsig2 * (k2 - 1.0) * (p.k / p.gamma).ln();
            if radicand < 0.0 {
                return Err(Error::Infeasible(format!("negative radicand {radicand}")));
            }
            Ok((e * (p.rho_minus + k2 * p.rho_plus) - p.d_eta() * (k2 + 1.0) + p.k * radicand.sqrt()) / (k2 - 1.0))
        }
    }
}

fn first_second_a(p: &TheoryParams) -> Result<f64> {
    let a = (p.epsilon - 2.0 * p.d_eta() - p.epsilon * p.rho_minus) / p.score_scale();
    if a == 0.0 {
        return Err(Error::Singular("A vanishes".into()));
    }
    Ok(a)
}

/// Closed-form class errors at the optimal bias.
pub fn errors(scenario: Scenario, p: &TheoryParams) -> Result<ErrorPair> {
    check_feasible(scenario, p)?;
    let s = p.score_scale();
    let e = p.epsilon;
    let lg = p.gamma.ln();
    let (err_minus, err_plus) = match scenario {
        Scenario::FirstTypeBoth => {
            let a = (e - 2.0 * p.d_eta() + e * p.rho_plus) / s;
            if a == 0.0 {
                return Err(Error::Singular("A vanishes".into()));
            }
            (
                phi(a / 2.0 + lg / a - e / s),
                phi(a / 2.0 - lg / a - e * p.rho_plus / s),
            )
        }
        Scenario::SecondTypeNegative => {
            let a = first_second_a(p)?;
            (
                phi(a / 2.0 + lg / a + e * p.rho_minus / s),
                phi(a / 2.0 - lg / a - e / s),
            )
        }
        Scenario::UnequalVariance => {
            let k2 = p.k * p.k;
            let b = (e * p.rho_plus + e * p.rho_minus - 2.0 * p.d_eta()) / (s * (k2 - 1.0));
            let q = 2.0 * (p.k / p.gamma).ln() / (k2 - 1.0);
            let r = b * b + q;
            if r < 0.0 {
                return Err(Error::Infeasible(format!("B² + q = {r} is negative")));
            }
            let root = r.sqrt();
            (
                phi(p.k * b + root - e * p.rho_minus / (p.k * s)),
                phi(-p.k * root - b - e * p.rho_plus / s),
            )
        }
    };
    Ok(ErrorPair::new(err_minus, err_plus, p.gamma))
}

/// Truth values of the sufficient conditions attached to each scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendConditions {
    /// `Γ < exp(((2d−1)η − ε)²/(2dσ²))`: raising `ρ₊` helps class `+1` (first-type scenario).
    pub rho_plus_helps_positive: bool,
    /// `Γ > 1`: raising `ρ₋` helps class `+1` (second-type scenario).
    pub rho_minus_helps_positive: bool,
    /// `K·e^{(2dη−ε)²/(2dK²σ²)} < Γ < K·e^{2dη²/((K²−1)σ²)}`: class imbalance dominates.
    pub class_imbalance_window: bool,
    /// `K > Γ`: variance imbalance dominates.
    pub variance_dominant: bool,
}

pub fn trend_conditions(p: &TheoryParams) -> TrendConditions {
    let d = p.dim as f64;
    let s2 = p.sigma * p.sigma;
    let (lo, hi) = class_imbalance_window(p);
    TrendConditions {
        rho_plus_helps_positive: p.gamma < (((2.0 * d - 1.0) * p.eta - p.epsilon).powi(2) / (2.0 * d * s2)).exp(),
        rho_minus_helps_positive: p.gamma > 1.0,
        class_imbalance_window: lo < p.gamma && p.gamma < hi,
        variance_dominant: p.k > p.gamma,
    }
}

/// Bounds of the `Γ` window in which class imbalance dominates (unequal-variance scenario).
pub fn class_imbalance_window(p: &TheoryParams) -> (f64, f64) {
    let d = p.dim as f64;
    let k2 = p.k * p.k;
    let s2 = p.sigma * p.sigma;
    let lo = p.k * ((2.0 * d * p.eta - p.epsilon).powi(2) / (2.0 * d * k2 * s2)).exp();
    let hi = if p.k > 1.0 {
        p.k * (2.0 * d * p.eta * p.eta / ((k2 - 1.0) * s2)).exp()
    } else {
        f64::INFINITY
    };
    (lo, hi)
}

/// Symmetric bias range `±5·√d·η` used by the grid searches.
pub fn bias_search_range(p: &TheoryParams) -> (f64, f64) {
    let r = 5.0 * (p.dim as f64).sqrt() * p.eta;
    (-r, r)
}

/// Grid search for the optimal bias on the closed-form shifted objective.
///
/// Returns the lowest strict interior local minimum of the grid, or the global
/// grid minimum when the objective has no interior local minimum. Away from
/// equal variances the objective can decrease again towards the range edge,
/// and the optimal-bias formula names the interior stationary point.
pub fn grid_search_bias(scenario: Scenario, p: &TheoryParams, lo: f64, hi: f64, step: f64) -> Result<f64> {
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::invalid("grid needs hi > lo and a positive step"));
    }
    let n = ((hi - lo) / step).round() as usize + 1;
    let b = |i: usize| lo + i as f64 * step;
    let values: Vec<f64> = (0..n).map(|i| perturbed_objective(scenario, p, b(i))).collect();
    let mut best: Option<usize> = None;
    for i in 1..n.saturating_sub(1) {
        if values[i] < values[i - 1] && values[i] <= values[i + 1] && best.is_none_or(|j| values[i] < values[j]) {
            best = Some(i);
        }
    }
    let i = best.unwrap_or_else(|| {
        (0..n)
            .min_by(|&a, &c| values[a].total_cmp(&values[c]))
            .expect("grid is non-empty")
    });
    Ok(b(i))
}

/// Two-stage grid search: a coarse pass over the full range, then a pass at
/// `fine_step` over two coarse cells either side of the coarse result.
pub fn refine_bias(scenario: Scenario, p: &TheoryParams, coarse_step: f64, fine_step: f64) -> Result<f64> {
    let (lo, hi) = bias_search_range(p);
    let coarse = grid_search_bias(scenario, p, lo, hi, coarse_step)?;
    grid_search_bias(
        scenario,
        p,
        coarse - 2.0 * coarse_step,
        coarse + 2.0 * coarse_step,
        fine_step,
    )
}

/// Direction of a monotone trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
}

/// Every pair `i < j` satisfies `v_j > v_i − slack` (increasing) or
/// `v_j < v_i + slack` (decreasing).
pub fn is_monotone(values: &[f64], trend: Trend, slack: f64) -> bool {
    values.iter().enumerate().all(|(i, &a)| {
        values[i + 1..].iter().all(|&b| match trend {
            Trend::Increasing => b > a - slack,
            Trend::Decreasing => b < a + slack,
        })
    })
}
