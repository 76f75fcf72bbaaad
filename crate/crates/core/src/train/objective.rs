//! Training objectives: per-method logit offsets and the loss/gradient they induce.
//!
//! Offsets are computed from the current logits and then frozen, so the
//! parameter gradient flows only through the logits themselves.

use crate::baselines::{isda_offset, la_offset, ldam_offset, ntr_shift, IsdaInputs, LcParams};
use crate::batch::{ClassProfile, LogitBatch, TaskKind};
use crate::error::{Error, Result};
use crate::lpl::{
    class_mean_confidence, class_mean_confidence_multilabel, class_offsets, combined_la_lpl_loss, compute_bounds,
    split_by_index, split_by_performance, BoundForm, MultilabelPerturbation, PerturbationSpec, SplitMode,
};
use crate::math::{
    binary_logistic_loss, ce_logit_gradient_index, cross_entropy_index, sigmoid, softmax_unchecked, softplus,
};

/// Weight of the previous value when smoothing per-class confidence across batches.
pub const CONFIDENCE_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    Fixed,
    /// Threshold tracks the mean of the smoothed class confidences.
    RunningMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LplSettings {
    pub spec: PerturbationSpec,
    pub form: BoundForm,
    pub tau_rule: TauRule,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    None,
    La { lambda: f64 },
    Isda { strength: f64 },
    Ldam { margin: f64 },
    Ntr { lambda: f64, psi: f64 },
    Lc(LcParams),
    Lpl(LplSettings),
    LaLpl { lambda: f64, lpl: LplSettings },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::La { .. } => "la",
            Method::Isda { .. } => "isda",
            Method::Ldam { .. } => "ldam",
            Method::Ntr { .. } => "ntr",
            Method::Lc(_) => "lc",
            Method::Lpl(_) => "lpl",
            Method::LaLpl { .. } => "la+lpl",
        }
    }

    /// Task kinds the method is defined for.
    pub fn supports(&self, kind: TaskKind) -> bool {
        match self {
            Method::None => true,
            Method::La { .. } | Method::Isda { .. } | Method::Ldam { .. } | Method::LaLpl { .. } => {
                kind == TaskKind::SingleLabel
            }
            Method::Ntr { .. } | Method::Lc(_) => kind == TaskKind::MultiLabel,
            Method::Lpl(s) => (s.spec.mode == SplitMode::MultiLabel) == (kind == TaskKind::MultiLabel),
        }
    }

    fn lpl(&self) -> Option<&LplSettings> {
        match self {
            Method::Lpl(s) | Method::LaLpl { lpl: s, .. } => Some(s),
            _ => None,
        }
    }
}

/// Frozen offsets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchOffsets {
    /// No perturbation; plain cross-entropy or binary-logistic loss.
    None,
    /// One additive offset vector per sample, inside the softmax.
    Single(Vec<Vec<f64>>),
    Binary(BinaryShift),
}

/// Per-class shifts of the two binary-logistic branches:
/// positives pay `softplus(−u + positive_c)`, negatives
/// `softplus(t·(u − negative_c))/t` with `t` the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryShift {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub temperature: f64,
}

/// Per-class sums of unperturbed and perturbed sample losses. Slot 0 holds
/// the class's own samples (multi-label: its positives), slot 1 the
/// multi-label negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTally {
    pub base: Vec<[f64; 2]>,
    pub perturbed: Vec<[f64; 2]>,
    pub count: Vec<[usize; 2]>,
}

impl ClassTally {
    pub fn new(classes: usize) -> Self {
        Self {
            base: vec![[0.0; 2]; classes],
            perturbed: vec![[0.0; 2]; classes],
            count: vec![[0; 2]; classes],
        }
    }

    fn add(&mut self, class: usize, slot: usize, base: f64, perturbed: f64) {
        self.base[class][slot] += base;
        self.perturbed[class][slot] += perturbed;
        self.count[class][slot] += 1;
    }

    pub fn merge(&mut self, other: &ClassTally) {
        for c in 0..self.base.len() {
            for s in 0..2 {
                self.base[c][s] += other.base[c][s];
                self.perturbed[c][s] += other.perturbed[c][s];
                self.count[c][s] += other.count[c][s];
            }
        }
    }

    /// `(l' − l)/l` of the summed losses; `None` without samples.
    pub fn relative(&self, class: usize, slot: usize) -> Option<f64> {
        let base = self.base[class][slot];
        (self.count[class][slot] > 0 && base > 0.0).then(|| (self.perturbed[class][slot] - base) / base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    /// Mean perturbed loss.
    pub loss: f64,
    /// `∂loss/∂u`, row-major like the batch logits.
    pub dlogits: Vec<f64>,
    pub tally: ClassTally,
}

/// Loss and logit gradient with the offsets held fixed.
pub fn loss_with_offsets(batch: &LogitBatch, offsets: &BatchOffsets) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let c = batch.classes();
    let mut tally = ClassTally::new(c);
    let mut dlogits = Vec::with_capacity(batch.logits().len());
    let mut total = 0.0;
    match (offsets, batch.kind()) {
        (BatchOffsets::None | BatchOffsets::Single(_), TaskKind::SingleLabel) => {
            let labels = batch.labels()?;
            if let BatchOffsets::Single(o) = offsets {
                if o.len() != batch.len() || o.iter().any(|v| v.len() != c) {
                    return Err(Error::invalid("offsets do not match the batch"));
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (i, (row, &k)) in batch.rows().zip(labels).enumerate() {
                let base = cross_entropy_index(row, k);
                let (loss, grad) = match offsets {
                    BatchOffsets::Single(o) => {
                        let shifted: Vec<f64> = row.iter().zip(&o[i]).map(|(u, d)| u + d).collect();
                        let mut p = softmax_unchecked(&shifted);
                        p[k] -= 1.0;
                        (cross_entropy_index(&shifted, k), p)
                    }
                    _ => (base, ce_logit_gradient_index(row, k)),
                };
                total += loss;
                tally.add(k, 0, base, loss);
                dlogits.extend(grad.into_iter().map(|g| g * scale));
            }
            Ok(LossEval {
                loss: total * scale,
                dlogits,
                tally,
            })
        }
        (BatchOffsets::None | BatchOffsets::Binary(_), TaskKind::MultiLabel) => {
            let hot = batch.multi_hot()?;
            let zero = BinaryShift {
                positive: vec![0.0; c],
                negative: vec![0.0; c],
                temperature: 1.0,
            };
            let shift = match offsets {
                BatchOffsets::Binary(s) => s,
                _ => &zero,
            };
            if shift.positive.len() != c || shift.negative.len() != c {
                return Err(Error::invalid("binary shifts do not match the class count"));
            }
            let t = shift.temperature;
            let scale = 1.0 / batch.logits().len() as f64;
            for (idx, (&u, &y)) in batch.logits().iter().zip(hot).enumerate() {
                let class = idx % c;
                let (loss, grad) = if y {
                    let z = -u + shift.positive[class];
                    (softplus(z), -sigmoid(z))
                } else {
                    let z = t * (u - shift.negative[class]);
                    (softplus(z) / t, sigmoid(z))
                };
                total += loss;
                tally.add(class, usize::from(!y), binary_logistic_loss(u, y), loss);
                dlogits.push(grad * scale);
            }
            Ok(LossEval {
                loss: total * scale,
                dlogits,
                tally,
            })
        }
        _ => Err(Error::invalid("offset kind does not match the task")),
    }
}

/// Turns a method into per-batch offsets, carrying the state some methods need
/// across batches (smoothed class confidence, feature covariances).
#[derive(Debug, Clone)]
pub struct Perturber {
    method: Method,
    profile: ClassProfile,
    confidence: Vec<f64>,
    tau: Option<f64>,
    covariances: Option<Vec<Vec<f64>>>,
}

impl Perturber {
    pub fn new(method: Method, profile: ClassProfile) -> Result<Self> {
        let c = profile.classes();
        if !method.supports(profile.kind()) {
            return Err(Error::invalid(format!(
                "method {} does not apply to {:?} data",
                method.name(),
                profile.kind()
            )));
        }
        match &method {
            Method::La { lambda } | Method::LaLpl { lambda, .. } => {
                la_offset(&profile, *lambda)?;
            }
            Method::Ldam { margin } if !margin.is_finite() => return Err(Error::invalid("LDAM margin must be finite")),
            Method::Isda { strength } if !(*strength >= 0.0) => {
                return Err(Error::invalid("ISDA strength must be non-negative"))
            }
            Method::Ntr { lambda, psi } => {
                crate::baselines::NtrLoss::new(&profile, *lambda, *psi)?;
            }
            Method::Lc(p) if p.pos_means.len() != c => {
                return Err(Error::invalid(format!(
                    "{} compensation means for {c} classes",
                    p.pos_means.len()
                )))
            }
            _ => {}
        }
        let mut tau = None;
        if let Some(s) = method.lpl() {
            s.spec.check_classes(c)?;
            if s.tau_rule == TauRule::RunningMean && s.spec.mode != SplitMode::Performance {
                return Err(Error::invalid("a running-mean threshold needs the performance split"));
            }
            tau = Some(match s.tau_rule {
                TauRule::Fixed => s.spec.tau,
                TauRule::RunningMean => 1.0 / c as f64,
            });
        }
        Ok(Self {
            method,
            confidence: vec![1.0 / c as f64; c],
            profile,
            tau,
            covariances: None,
        })
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    /// Threshold used for the most recent batch (LPL methods only).
    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    /// Smoothed per-class confidence.
    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn needs_covariances(&self) -> bool {
        matches!(self.method, Method::Isda { .. })
    }

    /// Row-major `dim × dim` feature covariance per class, for ISDA.
    pub fn set_covariances(&mut self, covariances: Vec<Vec<f64>>) {
        self.covariances = Some(covariances);
    }

    /// Offsets for `batch`; `output_rows` are the logit-layer weight rows.
    pub fn offsets(&mut self, batch: &LogitBatch, output_rows: &[Vec<f64>]) -> Result<BatchOffsets> {
        let c = batch.classes();
        if c != self.profile.classes() {
            return Err(Error::invalid("batch and corpus class counts differ"));
        }
        let per_sample = |class_vec: &dyn Fn(usize) -> Result<Vec<f64>>| -> Result<BatchOffsets> {
            let labels = batch.labels()?;
            Ok(BatchOffsets::Single(
                labels.iter().map(|&k| class_vec(k)).collect::<Result<_>>()?,
            ))
        };
        match &self.method {
            Method::None => Ok(BatchOffsets::None),
            Method::La { lambda } => {
                let la = la_offset(&self.profile, *lambda)?;
                per_sample(&|_| Ok(la.clone()))
            }
            Method::Ldam { margin } => per_sample(&|k| ldam_offset(&self.profile, k, *margin)),
            Method::Isda { strength } => {
                let covs = self
                    .covariances
                    .clone()
                    .ok_or_else(|| Error::invalid("ISDA needs class feature covariances"))?;
                let inputs = IsdaInputs::new(covs, output_rows.to_vec(), *strength)?;
                per_sample(&|k| isda_offset(&inputs, k))
            }
            Method::Ntr { lambda, psi } => {
                let v = ntr_shift(&self.profile, *psi)?;
                Ok(BatchOffsets::Binary(BinaryShift {
                    positive: v.clone(),
                    negative: v,
                    temperature: *lambda,
                }))
            }
            Method::Lc(p) => Ok(BatchOffsets::Binary(BinaryShift {
                positive: p.pos_means.iter().map(|m| -m).collect(),
                negative: p.neg_means.iter().map(|m| -m).collect(),
                temperature: 1.0,
            })),
            Method::Lpl(s) | Method::LaLpl { lpl: s, .. } => {
                let s = *s;
                let tau = self.update_threshold(batch, &s)?;
                let conf: Vec<Option<f64>> = self.confidence.iter().copied().map(Some).collect();
                let bounds = compute_bounds(&conf, tau, &s.spec, s.form)?;
                if s.spec.mode == SplitMode::MultiLabel {
                    let deltas = MultilabelPerturbation::new(tau, bounds.bounds()).deltas().to_vec();
                    return Ok(BatchOffsets::Binary(BinaryShift {
                        positive: deltas.clone(),
                        negative: deltas,
                        temperature: 1.0,
                    }));
                }
                let split = match s.spec.mode {
                    SplitMode::Performance => split_by_performance(&conf, tau),
                    _ => split_by_index(c, tau),
                };
                let class_vecs = match &self.method {
                    Method::LaLpl { lambda, .. } => {
                        combined_la_lpl_loss(batch, &self.profile, *lambda, &split, &bounds)?.offsets
                    }
                    _ => class_offsets(batch, &split, &bounds)?,
                };
                per_sample(&|k| Ok(class_vecs[k].clone()))
            }
        }
    }

    fn update_threshold(&mut self, batch: &LogitBatch, s: &LplSettings) -> Result<f64> {
        let fresh = match batch.kind() {
            TaskKind::SingleLabel => class_mean_confidence(batch)?,
            TaskKind::MultiLabel => class_mean_confidence_multilabel(batch)?,
        };
        for (state, q) in self.confidence.iter_mut().zip(fresh) {
            if let Some(q) = q {
                *state = CONFIDENCE_MOMENTUM * *state + (1.0 - CONFIDENCE_MOMENTUM) * q;
            }
        }
        let tau = match s.tau_rule {
            TauRule::Fixed => s.spec.tau,
            TauRule::RunningMean => self.confidence.iter().sum::<f64>() / self.confidence.len() as f64,
        };
        self.tau = Some(tau);
        Ok(tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{lc_loss, ntr_loss, perturbed_ce, plain_ce, NtrLoss};
    use crate::batch::Targets;
    use crate::lpl::{lpl_loss_multilabel, BoundVector};
    use crate::math::RngStream;
    use rand::Rng;

    fn random_single(n: usize, c: usize, seed: u64) -> LogitBatch {
        let mut r = RngStream::new(seed, 0).rng();
        let logits = (0..n * c).map(|_| r.random_range(-3.0..3.0)).collect();
        let labels = (0..n).map(|i| i % c).collect();
        LogitBatch::new(c, logits, Targets::Single(labels)).unwrap()
    }

    fn random_multi(n: usize, c: usize, seed: u64) -> LogitBatch {
        let mut r = RngStream::new(seed, 1).rng();
        let logits = (0..n * c).map(|_| r.random_range(-3.0..3.0)).collect();
        let hot = (0..n * c).map(|i| !(i / c + i % c).is_multiple_of(3)).collect();
        LogitBatch::new(c, logits, Targets::Multi(hot)).unwrap()
    }

    fn lpl(mode: SplitMode, tau: f64, eps: f64) -> LplSettings {
        LplSettings {
            spec: PerturbationSpec::new(mode, tau, eps, 0.0, 0.01).unwrap(),
            form: BoundForm::AbsoluteDifference,
            tau_rule: TauRule::Fixed,
        }
    }

    #[test]
    fn single_label_losses_match_reference_functions() {
        let batch = random_single(9, 3, 1);
        let none = loss_with_offsets(&batch, &BatchOffsets::None).unwrap();
        assert!((none.loss - plain_ce(&batch).unwrap()).abs() < 1e-14);
        let offsets: Vec<Vec<f64>> = (0..9).map(|i| vec![0.1 * i as f64, -0.2, 0.3]).collect();
        let e = loss_with_offsets(&batch, &BatchOffsets::Single(offsets.clone())).unwrap();
        assert!((e.loss - perturbed_ce(&batch, &offsets).unwrap()).abs() < 1e-14);
        let rel = crate::baselines::relative_loss_variation(&batch, &offsets).unwrap();
        for (c, r) in rel.iter().enumerate() {
            assert!((e.tally.relative(c, 0).unwrap() - r.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn multilabel_losses_match_reference_functions() {
        let batch = random_multi(8, 3, 2);
        let profile = ClassProfile::from_targets(3, batch.targets()).unwrap();
        let mut ntr = Perturber::new(Method::Ntr { lambda: 2.0, psi: 0.5 }, profile.clone()).unwrap();
        let off = ntr.offsets(&batch, &[]).unwrap();
        let e = loss_with_offsets(&batch, &off).unwrap();
        assert!((e.loss - ntr_loss(&batch, &profile, 2.0, 0.5).unwrap()).abs() < 1e-14);
        let want =
            crate::baselines::relative_loss_variation_multilabel(&batch, &NtrLoss::new(&profile, 2.0, 0.5).unwrap())
                .unwrap();
        for (c, w) in want.iter().enumerate() {
            assert!((e.tally.relative(c, 0).unwrap() - w.positive.unwrap()).abs() < 1e-12);
            assert!((e.tally.relative(c, 1).unwrap() - w.negative.unwrap()).abs() < 1e-12);
        }

        let lc = LcParams::new(vec![0.5, -1.0, 2.0], vec![-0.3, 0.0, 1.0]).unwrap();
        let mut p = Perturber::new(Method::Lc(lc.clone()), profile.clone()).unwrap();
        let e = loss_with_offsets(&batch, &p.offsets(&batch, &[]).unwrap()).unwrap();
        assert!((e.loss - lc_loss(&batch, &lc).unwrap()).abs() < 1e-14);

        let mut p = Perturber::new(Method::Lpl(lpl(SplitMode::MultiLabel, 2.0, 0.3)), profile).unwrap();
        let e = loss_with_offsets(&batch, &p.offsets(&batch, &[]).unwrap()).unwrap();
        let bounds = BoundVector::uniform(3, 0.3, 0.01).unwrap();
        assert!((e.loss - lpl_loss_multilabel(&batch, 2.0, &bounds).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let h = 1e-6;
        let single = random_single(5, 4, 3);
        let offsets = BatchOffsets::Single((0..5).map(|i| vec![0.2, -0.1 * i as f64, 0.0, 0.4]).collect());
        let multi = random_multi(5, 4, 4);
        let shift = BatchOffsets::Binary(BinaryShift {
            positive: vec![0.3, -0.2, 0.0, 1.0],
            negative: vec![-0.5, 0.1, 0.2, 0.0],
            temperature: 1.7,
        });
        for (batch, off) in [(single, offsets), (multi, shift)] {
            let e = loss_with_offsets(&batch, &off).unwrap();
            for j in 0..batch.logits().len() {
                let bump = |d: f64| {
                    let mut l = batch.logits().to_vec();
                    l[j] += d;
                    let b = LogitBatch::new(batch.classes(), l, batch.targets().clone()).unwrap();
                    loss_with_offsets(&b, &off).unwrap().loss
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - e.dlogits[j]).abs() < 1e-8, "{j}: {fd} vs {}", e.dlogits[j]);
            }
        }
    }

    #[test]
    fn zero_bound_lpl_offsets_are_zero() {
        let batch = random_single(12, 3, 5);
        let profile = ClassProfile::from_targets(3, batch.targets()).unwrap();
        let mut p = Perturber::new(Method::Lpl(lpl(SplitMode::Index, 2.0, 0.0)), profile).unwrap();
        match p.offsets(&batch, &[]).unwrap() {
            BatchOffsets::Single(o) => assert!(o.iter().flatten().all(|&v| v == 0.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn index_split_raises_tail_and_lowers_head_loss() {
        let batch = random_single(30, 3, 6);
        let profile = ClassProfile::single_label(vec![100, 30, 10]).unwrap();
        let mut p = Perturber::new(Method::Lpl(lpl(SplitMode::Index, 2.0, 0.01)), profile).unwrap();
        let e = loss_with_offsets(&batch, &p.offsets(&batch, &[]).unwrap()).unwrap();
        assert!(e.tally.relative(0, 0).unwrap() < 0.0);
        assert!(e.tally.relative(1, 0).unwrap() > 0.0);
        assert!(e.tally.relative(2, 0).unwrap() > 0.0);
    }

    #[test]
    fn running_threshold_tracks_smoothed_confidence() {
        let batch = random_single(12, 3, 7);
        let profile = ClassProfile::from_targets(3, batch.targets()).unwrap();
        let settings = LplSettings {
            tau_rule: TauRule::RunningMean,
            ..lpl(SplitMode::Performance, 0.5, 0.02)
        };
        let mut p = Perturber::new(Method::Lpl(settings), profile.clone()).unwrap();
        assert_eq!(p.tau(), Some(1.0 / 3.0));
        p.offsets(&batch, &[]).unwrap();
        let q = class_mean_confidence(&batch).unwrap();
        let want: Vec<f64> = q.iter().map(|q| 0.9 / 3.0 + 0.1 * q.unwrap()).collect();
        assert_eq!(p.confidence(), want.as_slice());
        assert!((p.tau().unwrap() - want.iter().sum::<f64>() / 3.0).abs() < 1e-15);

        let index_running = LplSettings {
            tau_rule: TauRule::RunningMean,
            ..lpl(SplitMode::Index, 1.0, 0.02)
        };
        assert!(Perturber::new(Method::Lpl(index_running), profile).is_err());
    }

    #[test]
    fn methods_reject_the_wrong_task() {
        let single = ClassProfile::single_label(vec![5, 3]).unwrap();
        assert!(Perturber::new(Method::Ntr { lambda: 1.0, psi: 0.0 }, single.clone()).is_err());
        assert!(Perturber::new(Method::Lpl(lpl(SplitMode::MultiLabel, 1.0, 0.1)), single.clone()).is_err());
        assert!(Perturber::new(Method::La { lambda: 1.0 }, single).is_ok());
        let multi = ClassProfile::from_targets(2, &Targets::Multi(vec![true, false, true, true])).unwrap();
        assert!(Perturber::new(Method::Ldam { margin: 0.5 }, multi).is_err());
    }
}
