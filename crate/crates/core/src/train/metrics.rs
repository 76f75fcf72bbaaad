//! Evaluation on raw (unperturbed) logits.

use crate::batch::Targets;
use crate::data::Dataset;
use crate::error::{Error, Result};

use super::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Single-label only.
    pub top1_error: Option<f64>,
    /// Single-label only; `None` for classes without samples.
    pub class_error: Vec<Option<f64>>,
    /// Multi-label only.
    pub mean_ap: Option<f64>,
    /// Multi-label only; `None` for classes without positives.
    pub class_ap: Vec<Option<f64>>,
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Average precision of a ranking: mean over positives of the precision at
/// each positive's rank. Higher scores rank first; ties keep input order.
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Metrics of pre-computed logits (`n × C`, row-major) against targets.
pub fn metrics_from_logits(classes: usize, logits: &[f64], targets: &Targets) -> Result<Metrics> {
    match targets {
        Targets::Single(labels) => {
            if logits.len() != labels.len() * classes {
                return Err(Error::invalid("logits do not match the labels"));
            }
            let mut wrong = vec![0usize; classes];
            let mut count = vec![0usize; classes];
            for (row, &k) in logits.chunks(classes).zip(labels) {
                count[k] += 1;
                if argmax(row) != k {
                    wrong[k] += 1;
                }
            }
            let n: usize = count.iter().sum();
            Ok(Metrics {
                top1_error: (n > 0).then(|| wrong.iter().sum::<usize>() as f64 / n as f64),
                class_error: wrong
                    .iter()
                    .zip(&count)
                    .map(|(&w, &n)| (n > 0).then(|| w as f64 / n as f64))
                    .collect(),
                mean_ap: None,
                class_ap: Vec::new(),
            })
        }
        Targets::Multi(hot) => {
            if logits.len() != hot.len() {
                return Err(Error::invalid("logits do not match the labels"));
            }
            let class_ap: Vec<Option<f64>> = (0..classes)
                .map(|c| {
                    let scores: Vec<f64> = logits.iter().skip(c).step_by(classes).copied().collect();
                    let pos: Vec<bool> = hot.iter().skip(c).step_by(classes).copied().collect();
                    average_precision(&scores, &pos)
                })
                .collect();
            let present: Vec<f64> = class_ap.iter().flatten().copied().collect();
            Ok(Metrics {
                top1_error: None,
                class_error: Vec::new(),
                mean_ap: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
                class_ap,
            })
        }
    }
}

pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<Metrics> {
    if model.dim() != data.dim() || model.classes() != data.classes() {
        return Err(Error::invalid(format!(
            "model is {}→{}, data is {}→{}",
            model.dim(),
            model.classes(),
            data.dim(),
            data.classes()
        )));
    }
    metrics_from_logits(data.classes(), &model.logits_flat(data.features()), data.targets())
}
