//! Learned class-level logit perturbation.
//!
//! Classes are split into a positive-augment set (the perturbation raises
//! their loss) and a negative-augment set (it lowers it). Each class gets a
//! bound `ε_c`; for single-label tasks the bound is turned into a number of
//! fixed-size ascent or descent steps on the class-mean cross-entropy, and the
//! accumulated step is the class offset shared by all of its samples. For
//! multi-label tasks the per-class scalar offset has a closed form, `±ε_c`.
//!
//! Class indices are 0-based in the API. Index thresholds compare against the
//! 1-based position `c + 1`, so `τ = 0` puts every class in the positive set
//! and `τ = C + 1` puts every class in the negative set.

use crate::baselines::{la_offset, perturbed_ce, BranchLoss};
use crate::batch::{ClassProfile, LogitBatch};
use crate::error::{Error, Result};
use crate::math::{ce_logit_gradient_index, sigmoid, softmax_unchecked, softplus};

/// Slack added before flooring `ε_c / α` so that e.g. `0.3 / 0.1` gives 3 steps.
const STEP_FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Split by class mean confidence against a performance threshold.
    Performance,
    /// Split by class position in descending-prior order (long-tail).
    Index,
    /// Per-class binary tasks, split by class position.
    MultiLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundForm {
    /// `ε + Δε·|τ − q̄_c|`
    AbsoluteDifference,
    /// `ε + Δε·q̄_c/q̄_1` up to the threshold, `ε + Δε·q̄_C/q̄_c` after it.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

/// Everything that determines the inner optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub mode: SplitMode,
    pub tau: f64,
    pub epsilon: f64,
    pub delta_epsilon: f64,
    pub alpha: f64,
}

impl PerturbationSpec {
    pub fn new(mode: SplitMode, tau: f64, epsilon: f64, delta_epsilon: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {alpha}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("bound must be non-negative, got {epsilon}")));
        }
        if !(delta_epsilon >= 0.0 && delta_epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "bound increment must be non-negative, got {delta_epsilon}"
            )));
        }
        if !tau.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        Ok(Self {
            mode,
            tau,
            epsilon,
            delta_epsilon,
            alpha,
        })
    }

    /// Both bound terms zero: the method reduces to the unperturbed loss.
    pub fn is_disabled(&self) -> bool {
        self.epsilon == 0.0 && self.delta_epsilon == 0.0
    }

    /// Checks the index-threshold range against a class count.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        if self.mode != SplitMode::Performance && !(0.0..=(classes as f64 + 1.0)).contains(&self.tau) {
            return Err(Error::invalid(format!(
                "index threshold {} outside [0, {}]",
                self.tau,
                classes + 1
            )));
        }
        Ok(())
    }
}

/// Partition of the classes into positive- and negative-augment sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySplit {
    positive: Vec<bool>,
}

impl CategorySplit {
    pub fn from_membership(positive: Vec<bool>) -> Self {
        Self { positive }
    }

    pub fn classes(&self) -> usize {
        self.positive.len()
    }

    pub fn is_positive(&self, class: usize) -> bool {
        self.positive[class]
    }

    pub fn direction(&self, class: usize) -> Direction {
        if self.positive[class] {
            Direction::Maximize
        } else {
            Direction::Minimize
        }
    }

    pub fn positive_set(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| self.positive[c]).collect()
    }

    pub fn negative_set(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| !self.positive[c]).collect()
    }
}

/// Per-class bounds with their step counts for a fixed step size.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundVector {
    bounds: Vec<f64>,
    steps: Vec<usize>,
    alpha: f64,
}

impl BoundVector {
    pub fn new(bounds: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {alpha}")));
        }
        if let Some(b) = bounds.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::invalid(format!("bound {b} is not a finite non-negative value")));
        }
        let steps = bounds.iter().map(|&b| step_count(b, alpha)).collect();
        Ok(Self { bounds, steps, alpha })
    }

    pub fn uniform(classes: usize, epsilon: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![epsilon; classes], alpha)
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classes(&self) -> usize {
        self.bounds.len()
    }
}

/// `⌊ε/α⌋` with a small slack against representation error in the quotient.
pub fn step_count(epsilon: f64, alpha: f64) -> usize {
    (epsilon / alpha + STEP_FLOOR_SLACK).floor() as usize
}

/// Mean softmax probability of the true class over each class's samples;
/// `None` for classes absent from the batch.
pub fn class_mean_confidence(batch: &LogitBatch) -> Result<Vec<Option<f64>>> {
    let labels = batch.labels()?;
    let mut sum = vec![0.0; batch.classes()];
    let mut count = vec![0usize; batch.classes()];
    for (row, &k) in batch.rows().zip(labels) {
        sum[k] += softmax_unchecked(row)[k];
        count[k] += 1;
    }
    Ok(mean_or_none(&sum, &count))
}

/// Multi-label analogue: mean sigmoid score over each class's positive samples.
pub fn class_mean_confidence_multilabel(batch: &LogitBatch) -> Result<Vec<Option<f64>>> {
    let hot = batch.multi_hot()?;
    let c = batch.classes();
    let mut sum = vec![0.0; c];
    let mut count = vec![0usize; c];
    for (idx, (&u, &y)) in batch.logits().iter().zip(hot).enumerate() {
        if y {
            sum[idx % c] += sigmoid(u);
            count[idx % c] += 1;
        }
    }
    Ok(mean_or_none(&sum, &count))
}

fn mean_or_none(sum: &[f64], count: &[usize]) -> Vec<Option<f64>> {
    sum.iter()
        .zip(count)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Positive set: classes whose confidence does not exceed `τ`. Absent classes
/// are positive.
pub fn split_by_performance(confidence: &[Option<f64>], tau: f64) -> CategorySplit {
    CategorySplit::from_membership(confidence.iter().map(|q| q.is_none_or(|q| tau - q >= 0.0)).collect())
}

/// Positive set: classes at 1-based position `≥ τ`.
pub fn split_by_index(classes: usize, tau: f64) -> CategorySplit {
    CategorySplit::from_membership((0..classes).map(|c| index_sign(c, tau) > 0.0).collect())
}

fn index_sign(class: usize, tau: f64) -> f64 {
    if (class + 1) as f64 - tau >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-class bounds. Confidences are only read when `Δε > 0`.
pub fn compute_bounds(
    confidence: &[Option<f64>],
    tau: f64,
    spec: &PerturbationSpec,
    form: BoundForm,
) -> Result<BoundVector> {
    let c = confidence.len();
    if spec.delta_epsilon == 0.0 {
        return BoundVector::uniform(c, spec.epsilon, spec.alpha);
    }
    let q = |i: usize| confidence[i].ok_or_else(|| Error::invalid(format!("class {i} has no confidence estimate")));
    let bounds = match form {
        BoundForm::AbsoluteDifference => (0..c)
            .map(|i| Ok(spec.epsilon + spec.delta_epsilon * (tau - q(i)?).abs()))
            .collect::<Result<Vec<_>>>()?,
        BoundForm::Ratio => {
            if spec.mode == SplitMode::Performance {
                return Err(Error::invalid(
                    "the ratio bound needs a class order and is only defined for index splits",
                ));
            }
            let first = q(0)?;
            let last = q(c - 1)?;
            if first == 0.0 {
                return Err(Error::invalid("first-class confidence is zero"));
            }
            (0..c)
                .map(|i| {
                    let qi = q(i)?;
                    let ratio = if ((i + 1) as f64) <= tau {
                        qi / first
                    } else {
                        if qi == 0.0 {
                            return Err(Error::invalid(format!("class {i} confidence is zero")));
                        }
                        last / qi
                    };
                    Ok(spec.epsilon + spec.delta_epsilon * ratio)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    BoundVector::new(bounds, spec.alpha)
}

/// Fixed-step ascent or descent on the class-mean cross-entropy of one class's
/// samples. Returns the accumulated offset `u^K − u^0`.
pub fn pgd_perturb(rows: &[&[f64]], class: usize, bound: f64, alpha: f64, direction: Direction) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    if !(bound >= 0.0) {
        return Err(Error::invalid("bound must be non-negative"));
    }
    pgd_steps(rows, class, step_count(bound, alpha), alpha, direction)
}

pub(crate) fn pgd_steps(
    rows: &[&[f64]],
    class: usize,
    steps: usize,
    alpha: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::invalid("no samples for the class"));
    };
    let c = first.len();
    if rows.iter().any(|r| r.len() != c) || class >= c {
        return Err(Error::invalid("class rows have inconsistent shape"));
    }
    let mut offset = vec![0.0; c];
    let mut shifted = vec![0.0; c];
    let scale = direction.sign() * alpha / rows.len() as f64;
    for _ in 0..steps {
        let mut grad = vec![0.0; c];
        for row in rows {
            for ((s, u), d) in shifted.iter_mut().zip(*row).zip(&offset) {
                *s = u + d;
            }
            for (g, v) in grad.iter_mut().zip(ce_logit_gradient_index(&shifted, class)) {
                *g += v;
            }
        }
        for (d, g) in offset.iter_mut().zip(&grad) {
            *d += scale * g;
        }
    }
    Ok(offset)
}

/// Loss and per-class offsets of a perturbed single-label batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LplOutput {
    pub loss: f64,
    /// One offset per class (zero for classes absent from the batch), measured
    /// from the raw logits.
    pub offsets: Vec<Vec<f64>>,
}

impl LplOutput {
    /// The offset each sample receives.
    pub fn sample_offsets(&self, labels: &[usize]) -> Vec<Vec<f64>> {
        labels.iter().map(|&k| self.offsets[k].clone()).collect()
    }
}

/// Class offsets inferred from the batch's own members.
pub fn class_offsets(batch: &LogitBatch, split: &CategorySplit, bounds: &BoundVector) -> Result<Vec<Vec<f64>>> {
    let c = batch.classes();
    if split.classes() != c || bounds.classes() != c {
        return Err(Error::invalid(format!(
            "split has {} classes and bounds {}, batch has {c}",
            split.classes(),
            bounds.classes()
        )));
    }
    let members = batch.members_by_class()?;
    members
        .iter()
        .enumerate()
        .map(|(class, idx)| {
            if idx.is_empty() || bounds.steps()[class] == 0 {
                return Ok(vec![0.0; c]);
            }
            let rows: Vec<&[f64]> = idx.iter().map(|&i| batch.row(i)).collect();
            pgd_steps(
                &rows,
                class,
                bounds.steps()[class],
                bounds.alpha(),
                split.direction(class),
            )
        })
        .collect()
}

pub fn lpl_loss_single(batch: &LogitBatch, split: &CategorySplit, bounds: &BoundVector) -> Result<LplOutput> {
    let offsets = class_offsets(batch, split, bounds)?;
    let out = LplOutput { loss: 0.0, offsets };
    let loss = perturbed_ce(batch, &out.sample_offsets(batch.labels()?))?;
    Ok(LplOutput { loss, ..out })
}

/// Logit adjustment followed by the learned perturbation of the adjusted logits.
pub fn combined_la_lpl_loss(
    batch: &LogitBatch,
    profile: &ClassProfile,
    lambda: f64,
    split: &CategorySplit,
    bounds: &BoundVector,
) -> Result<LplOutput> {
    let la = la_offset(profile, lambda)?;
    if la.len() != batch.classes() {
        return Err(Error::invalid("profile and batch class counts differ"));
    }
    let adjusted: Vec<f64> = batch
        .rows()
        .flat_map(|row| row.iter().zip(&la).map(|(u, a)| u + a))
        .collect();
    let adjusted = LogitBatch::new(batch.classes(), adjusted, batch.targets().clone())?;
    let learned = class_offsets(&adjusted, split, bounds)?;
    let offsets: Vec<Vec<f64>> = learned
        .iter()
        .map(|d| d.iter().zip(&la).map(|(d, a)| d + a).collect())
        .collect();
    let out = LplOutput { loss: 0.0, offsets };
    let loss = perturbed_ce(batch, &out.sample_offsets(batch.labels()?))?;
    Ok(LplOutput { loss, ..out })
}

/// Closed-form multi-label offset: `+ε_c` at or after the threshold position,
/// `−ε_c` before it.
pub fn multilabel_delta(class: usize, tau: f64, bound: f64) -> f64 {
    index_sign(class, tau) * bound
}

/// Shared per-class scalar offsets of the multi-label loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilabelPerturbation {
    deltas: Vec<f64>,
}

impl MultilabelPerturbation {
    pub fn new(tau: f64, bounds: &[f64]) -> Self {
        Self {
            deltas: bounds
                .iter()
                .enumerate()
                .map(|(c, &b)| multilabel_delta(c, tau, b))
                .collect(),
        }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
}

impl BranchLoss for MultilabelPerturbation {
    fn branch_loss(&self, class: usize, logit: f64, positive: bool) -> f64 {
        let d = self.deltas[class];
        if positive {
            softplus(-logit + d)
        } else {
            softplus(logit - d)
        }
    }
}

pub fn lpl_loss_multilabel(batch: &LogitBatch, tau: f64, bounds: &BoundVector) -> Result<f64> {
    if bounds.classes() != batch.classes() {
        return Err(Error::invalid(format!(
            "{} bounds for {} classes",
            bounds.classes(),
            batch.classes()
        )));
    }
    crate::baselines::mean_multilabel_loss(batch, &MultilabelPerturbation::new(tau, bounds.bounds()))
}
