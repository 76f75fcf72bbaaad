//! Paired-run comparison of a perturbed method against a baseline.
//!
//! The expected pattern: a class whose training loss the perturbation raises
//! should end with a lower test error than under the baseline, and a class
//! whose loss it lowers should end with a higher one.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::{evaluate, train, Method, Split, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Loss variations this small count as no perturbation.
const NEUTRAL_VARIATION: f64 = 1e-12;

/// One paired experiment: both methods train on `train` with `seed`.
#[derive(Debug, Clone)]
pub struct Trial {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Agree,
    Disagree,
    Neutral,
}

impl Agreement {
    pub fn name(self) -> &'static str {
        match self {
            Agreement::Agree => "agree",
            Agreement::Disagree => "disagree",
            Agreement::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFinding {
    pub class: usize,
    /// Mean over epochs of the perturbed run's relative training-loss variation.
    pub loss_variation: f64,
    pub baseline_error: f64,
    pub perturbed_error: f64,
    /// `(baseline − perturbed)/baseline`, or `−perturbed` when the baseline error is zero.
    pub relative_improvement: f64,
    pub agreement: Agreement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFindings {
    pub seed: u64,
    pub classes: Vec<ClassFinding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureReport {
    pub baseline: &'static str,
    pub perturbed: &'static str,
    pub seeds: Vec<SeedFindings>,
}

impl ConjectureReport {
    pub fn agreements(&self, class: usize) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.classes[class].agreement == Agreement::Agree)
            .count()
    }

    /// Mean test errors of `class` across seeds: (baseline, perturbed).
    pub fn mean_errors(&self, class: usize) -> (f64, f64) {
        let n = self.seeds.len() as f64;
        let (b, p) = self.seeds.iter().fold((0.0, 0.0), |(b, p), s| {
            (
                b + s.classes[class].baseline_error,
                p + s.classes[class].perturbed_error,
            )
        });
        (b / n, p / n)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("seed,class,loss_variation,baseline_error,perturbed_error,relative_improvement,agreement\n");
        for s in &self.seeds {
            for f in &s.classes {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    s.seed,
                    f.class,
                    f.loss_variation,
                    f.baseline_error,
                    f.perturbed_error,
                    f.relative_improvement,
                    f.agreement.name()
                );
            }
        }
        out
    }
}

fn classify(variation: f64, improvement: f64) -> Agreement {
    if variation.abs() <= NEUTRAL_VARIATION {
        Agreement::Neutral
    } else if (variation > 0.0 && improvement > 0.0) || (variation < 0.0 && improvement < 0.0) {
        Agreement::Agree
    } else {
        Agreement::Disagree
    }
}

/// Runs both configurations on every trial and compares per-class outcomes.
/// The configurations may differ only in their method; single-label data only.
pub fn conjecture_report(
    baseline: &TrainConfig,
    perturbed: &TrainConfig,
    trials: &[Trial],
) -> Result<ConjectureReport> {
    if baseline.with_method(Method::None) != perturbed.with_method(Method::None) {
        return Err(Error::invalid("paired configurations must differ only in the method"));
    }
    let seeds = trials
        .par_iter()
        .map(|t| {
            let base_cfg = TrainConfig {
                seed: t.seed,
                ..baseline.clone()
            };
            let pert_cfg = base_cfg.with_method(perturbed.method.clone());
            let base = train(&base_cfg, &t.train, None)?;
            let pert = train(&pert_cfg, &t.train, None)?;
            let eb = evaluate(&base.model, &t.test)?;
            let ep = evaluate(&pert.model, &t.test)?;
            if eb.class_error.is_empty() {
                return Err(Error::invalid("the conjecture report needs single-label data"));
            }
            let classes = (0..t.train.classes())
                .map(|c| {
                    let series = pert.history.series(Split::Train, Some(c), "loss_variation");
                    let loss_variation = if series.is_empty() {
                        0.0
                    } else {
                        series.iter().sum::<f64>() / series.len() as f64
                    };
                    let baseline_error = eb.class_error[c].unwrap_or(0.0);
                    let perturbed_error = ep.class_error[c].unwrap_or(0.0);
                    let relative_improvement = if baseline_error > 0.0 {
                        (baseline_error - perturbed_error) / baseline_error
                    } else {
                        -perturbed_error
                    };
                    ClassFinding {
                        class: c,
                        loss_variation,
                        baseline_error,
                        perturbed_error,
                        relative_improvement,
                        agreement: classify(loss_variation, relative_improvement),
                    }
                })
                .collect();
            Ok(SeedFindings { seed: t.seed, classes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConjectureReport {
        baseline: baseline.method.name(),
        perturbed: perturbed.method.name(),
        seeds,
    })
}
