//! Published perturbation schemes written as explicit logit offsets.
//!
//! Single-label schemes (logit adjustment, ISDA, LDAM) produce an offset
//! vector that is added to a sample's logits before cross-entropy. The
//! multi-label schemes (negative-tolerant regularisation, logit compensation)
//! act per class on the two binary-logistic branches and are expressed
//! through [`BranchLoss`].

use crate::batch::{ClassProfile, LogitBatch};
use crate::error::{Error, Result};
use crate::math::{binary_logistic_loss, cross_entropy_index, softplus};

/// Logit-adjustment offset `λ·log π_c`, shared by every sample.
pub fn la_offset(profile: &ClassProfile, lambda: f64) -> Result<Vec<f64>> {
    let priors = profile.priors();
    if let Some(c) = priors.iter().position(|&p| p <= 0.0) {
        return Err(Error::invalid(format!("class {c} has zero prior")));
    }
    Ok(priors.iter().map(|p| lambda * p.ln()).collect())
}

/// Inputs of the ISDA offset: class covariances of the final-layer features,
/// the logit weight rows and the augmentation strength.
#[derive(Debug, Clone)]
pub struct IsdaInputs {
    dim: usize,
    /// One row-major `dim × dim` matrix per class.
    covariances: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    strength: f64,
}

impl IsdaInputs {
    pub fn new(covariances: Vec<Vec<f64>>, weights: Vec<Vec<f64>>, strength: f64) -> Result<Self> {
        let classes = weights.len();
        if classes == 0 {
            return Err(Error::invalid("ISDA needs at least one class"));
        }
        let dim = weights[0].len();
        if weights.iter().any(|w| w.len() != dim) {
            return Err(Error::invalid("ISDA weight rows differ in length"));
        }
        if covariances.len() != classes {
            return Err(Error::invalid(format!(
                "{} covariances for {classes} classes",
                covariances.len()
            )));
        }
        if !(strength >= 0.0) {
            return Err(Error::invalid("ISDA strength must be non-negative"));
        }
        for (k, cov) in covariances.iter().enumerate() {
            if cov.len() != dim * dim {
                return Err(Error::invalid(format!(
                    "covariance {k} has {} entries, expected {}",
                    cov.len(),
                    dim * dim
                )));
            }
            for i in 0..dim {
                for j in 0..i {
                    if (cov[i * dim + j] - cov[j * dim + i]).abs() > 1e-9 {
                        return Err(Error::invalid(format!("covariance {k} is not symmetric")));
                    }
                }
            }
            if !is_psd(cov, dim, 1e-9) {
                return Err(Error::invalid(format!("covariance {k} is not positive semi-definite")));
            }
        }
        Ok(Self {
            dim,
            covariances,
            weights,
            strength,
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }
}

/// `Σ + tol·I` admits a Cholesky factorisation iff every eigenvalue of `Σ` exceeds `-tol`.
fn is_psd(cov: &[f64], dim: usize, tol: f64) -> bool {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = cov[i * dim + j];
            if i == j {
                s += tol;
            }
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    true
}

/// ISDA offset for true class `k`: `(λ/2)(w_c − w_k)ᵀ Σ_k (w_c − w_k)` per class `c`.
pub fn isda_offset(inputs: &IsdaInputs, k: usize) -> Result<Vec<f64>> {
    if k >= inputs.classes() {
        return Err(Error::invalid(format!("class {k} out of range")));
    }
    let dim = inputs.dim;
    let cov = &inputs.covariances[k];
    let wk = &inputs.weights[k];
    let mut diff = vec![0.0; dim];
    Ok(inputs
        .weights
        .iter()
        .enumerate()
        .map(|(c, wc)| {
            if c == k {
                return 0.0;
            }
            for (d, (a, b)) in diff.iter_mut().zip(wc.iter().zip(wk)) {
                *d = a - b;
            }
            let mut q = 0.0;
            for i in 0..dim {
                let row = &cov[i * dim..(i + 1) * dim];
                q += diff[i] * row.iter().zip(&diff).map(|(s, d)| s * d).sum::<f64>();
            }
            0.5 * inputs.strength * q
        })
        .collect())
}

/// LDAM offset: `−margin·π_k^{−1/4}` on the true class, zero elsewhere.
///
/// `margin` folds the scheme's multiplicative constant and scale into one knob.
pub fn ldam_offset(profile: &ClassProfile, k: usize, margin: f64) -> Result<Vec<f64>> {
    let priors = profile.priors();
    let pk = *priors
        .get(k)
        .ok_or_else(|| Error::invalid(format!("class {k} out of range")))?;
    if pk <= 0.0 {
        return Err(Error::invalid(format!("class {k} has zero prior")));
    }
    let mut out = vec![0.0; priors.len()];
    out[k] = -margin * pk.powf(-0.25);
    Ok(out)
}

/// Per-class NTR shift `v_c = ψ·log(N/N_c − 1)`.
pub fn ntr_shift(profile: &ClassProfile, psi: f64) -> Result<Vec<f64>> {
    let total = profile.total();
    profile
        .counts()
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 || n >= total {
                return Err(Error::invalid(format!(
                    "class {c} has {n} of {total} positives; need 0 < N_c < N"
                )));
            }
            if psi == 0.0 {
                return Ok(0.0);
            }
            Ok(psi * (total as f64 / n as f64 - 1.0).ln())
        })
        .collect()
}

/// NTR logit offset, the negated shift.
pub fn ntr_offset(profile: &ClassProfile, psi: f64) -> Result<Vec<f64>> {
    Ok(ntr_shift(profile, psi)?.into_iter().map(|v| -v).collect())
}

/// Per-class, per-branch loss of a multi-label scheme.
pub trait BranchLoss {
    fn branch_loss(&self, class: usize, logit: f64, positive: bool) -> f64;
}

/// Unperturbed binary-logistic loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainBinary;

impl BranchLoss for PlainBinary {
    fn branch_loss(&self, _class: usize, logit: f64, positive: bool) -> f64 {
        binary_logistic_loss(logit, positive)
    }
}

/// Negative-tolerant binary loss.
#[derive(Debug, Clone)]
pub struct NtrLoss {
    shift: Vec<f64>,
    lambda: f64,
}

impl NtrLoss {
    pub fn new(profile: &ClassProfile, lambda: f64, psi: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid("NTR lambda must be positive"));
        }
        Ok(Self {
            shift: ntr_shift(profile, psi)?,
            lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
}

impl BranchLoss for NtrLoss {
    fn branch_loss(&self, class: usize, logit: f64, positive: bool) -> f64 {
        let v = self.shift[class];
        if positive {
            softplus(-logit + v)
        } else {
            softplus(self.lambda * (logit - v)) / self.lambda
        }
    }
}

/// Logit-compensation means for positive and negative samples (unit scales).
#[derive(Debug, Clone, PartialEq)]
pub struct LcParams {
    pub pos_means: Vec<f64>,
    pub neg_means: Vec<f64>,
}

impl LcParams {
    pub fn new(pos_means: Vec<f64>, neg_means: Vec<f64>) -> Result<Self> {
        if pos_means.len() != neg_means.len() {
            return Err(Error::invalid("positive and negative means differ in length"));
        }
        if pos_means.iter().chain(&neg_means).any(|m| !m.is_finite()) {
            return Err(Error::invalid("non-finite logit-compensation mean"));
        }
        Ok(Self { pos_means, neg_means })
    }
}

impl BranchLoss for LcParams {
    fn branch_loss(&self, class: usize, logit: f64, positive: bool) -> f64 {
        if positive {
            softplus(-(logit + self.pos_means[class]))
        } else {
            softplus(logit + self.neg_means[class])
        }
    }
}

/// Mean over samples and classes of a multi-label branch loss.
pub fn mean_multilabel_loss(batch: &LogitBatch, loss: &dyn BranchLoss) -> Result<f64> {
    let hot = batch.multi_hot()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let total: f64 = batch
        .logits()
        .iter()
        .zip(hot)
        .enumerate()
        .map(|(idx, (&u, &y))| loss.branch_loss(idx % batch.classes(), u, y))
        .sum();
    Ok(total / batch.logits().len() as f64)
}

pub fn ntr_loss(batch: &LogitBatch, profile: &ClassProfile, lambda: f64, psi: f64) -> Result<f64> {
    check_profile(batch, profile)?;
    mean_multilabel_loss(batch, &NtrLoss::new(profile, lambda, psi)?)
}

pub fn lc_loss(batch: &LogitBatch, params: &LcParams) -> Result<f64> {
    if params.pos_means.len() != batch.classes() {
        return Err(Error::invalid(format!(
            "{} compensation means for {} classes",
            params.pos_means.len(),
            batch.classes()
        )));
    }
    mean_multilabel_loss(batch, params)
}

fn check_profile(batch: &LogitBatch, profile: &ClassProfile) -> Result<()> {
    if profile.classes() != batch.classes() {
        return Err(Error::invalid(format!(
            "profile has {} classes, batch has {}",
            profile.classes(),
            batch.classes()
        )));
    }
    Ok(())
}

fn check_offsets(batch: &LogitBatch, offsets: &[Vec<f64>]) -> Result<()> {
    if offsets.len() != batch.len() {
        return Err(Error::invalid(format!(
            "{} offsets for {} samples",
            offsets.len(),
            batch.len()
        )));
    }
    if offsets.iter().any(|o| o.len() != batch.classes()) {
        return Err(Error::invalid("offset length differs from class count"));
    }
    Ok(())
}

fn shifted(row: &[f64], offset: &[f64]) -> Vec<f64> {
    row.iter().zip(offset).map(|(u, d)| u + d).collect()
}

/// Per-sample cross-entropy after adding each sample's offset.
pub fn perturbed_ce_per_sample(batch: &LogitBatch, offsets: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_offsets(batch, offsets)?;
    let labels = batch.labels()?;
    Ok(batch
        .rows()
        .zip(offsets)
        .zip(labels)
        .map(|((row, off), &k)| cross_entropy_index(&shifted(row, off), k))
        .collect())
}

/// Mean cross-entropy of `u_i + δ_i`.
pub fn perturbed_ce(batch: &LogitBatch, offsets: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let losses = perturbed_ce_per_sample(batch, offsets)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn plain_ce(batch: &LogitBatch) -> Result<f64> {
    let zeros = vec![vec![0.0; batch.classes()]; batch.len()];
    perturbed_ce(batch, &zeros)
}

/// Relative loss variation `(l' − l)/l` per class, from class means.
/// Classes without samples are `None`.
pub fn relative_loss_variation(batch: &LogitBatch, offsets: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    let perturbed = perturbed_ce_per_sample(batch, offsets)?;
    let labels = batch.labels()?;
    let mut base = vec![0.0; batch.classes()];
    let mut pert = vec![0.0; batch.classes()];
    let mut count = vec![0usize; batch.classes()];
    for ((row, &k), l) in batch.rows().zip(labels).zip(&perturbed) {
        base[k] += cross_entropy_index(row, k);
        pert[k] += l;
        count[k] += 1;
    }
    Ok((0..batch.classes())
        .map(|c| (count[c] > 0).then(|| (pert[c] - base[c]) / base[c]))
        .collect())
}

/// Relative loss variation of one class split by sample polarity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolarVariation {
    pub positive: Option<f64>,
    pub negative: Option<f64>,
}

/// Multi-label relative loss variation against the plain binary loss,
/// reported separately for positive and negative samples of each class.
pub fn relative_loss_variation_multilabel(batch: &LogitBatch, loss: &dyn BranchLoss) -> Result<Vec<PolarVariation>> {
    let hot = batch.multi_hot()?;
    let c = batch.classes();
    // [class][polarity] sums; polarity 0 = positive
    let mut base = vec![[0.0; 2]; c];
    let mut pert = vec![[0.0; 2]; c];
    let mut count = vec![[0usize; 2]; c];
    for (idx, (&u, &y)) in batch.logits().iter().zip(hot).enumerate() {
        let class = idx % c;
        let pol = usize::from(!y);
        base[class][pol] += binary_logistic_loss(u, y);
        pert[class][pol] += loss.branch_loss(class, u, y);
        count[class][pol] += 1;
    }
    let ratio = |class: usize, pol: usize| {
        (count[class][pol] > 0).then(|| (pert[class][pol] - base[class][pol]) / base[class][pol])
    };
    Ok((0..c)
        .map(|class| PolarVariation {
            positive: ratio(class, 0),
            negative: ratio(class, 1),
        })
        .collect())
}
