//! Desk-scale training with pluggable logit perturbation.
//!
//! Each mini-batch is pushed through the model, the selected method turns the
//! batch logits into offsets, and the offsets are then held fixed while the
//! perturbed loss is backpropagated to the parameters. Evaluation always uses
//! the raw logits.

mod metrics;
mod model;
mod objective;
mod report;

use std::fmt::Write as _;

use rand::seq::SliceRandom;

pub use metrics::{argmax, average_precision, evaluate, metrics_from_logits, Metrics};
pub use model::{Architecture, Gradients, Layer, ModelParams, Sgd};
pub use objective::{
    loss_with_offsets, BatchOffsets, BinaryShift, ClassTally, LossEval, LplSettings, Method, Perturber, TauRule,
    CONFIDENCE_MOMENTUM,
};
pub use report::{conjecture_report, Agreement, ClassFinding, ConjectureReport, SeedFindings, Trial};

use crate::batch::{LogitBatch, Targets, TaskKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub method: Method,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }

    /// The same run with another method.
    pub fn with_method(&self, method: Method) -> Self {
        Self { method, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    /// `None` for whole-dataset values.
    pub class: Option<usize>,
    pub metric: &'static str,
    pub value: f64,
}

/// Per-epoch metric log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    fn push(&mut self, epoch: usize, split: Split, class: Option<usize>, metric: &'static str, value: f64) {
        self.rows.push(HistoryRow {
            epoch,
            split,
            class,
            metric,
            value,
        });
    }

    fn push_metrics(&mut self, epoch: usize, split: Split, m: &Metrics) {
        if let Some(e) = m.top1_error {
            self.push(epoch, split, None, "top1_error", e);
        }
        for (c, e) in m.class_error.iter().enumerate() {
            if let Some(e) = e {
                self.push(epoch, split, Some(c), "top1_error", *e);
            }
        }
        if let Some(v) = m.mean_ap {
            self.push(epoch, split, None, "map", v);
        }
        for (c, ap) in m.class_ap.iter().enumerate() {
            if let Some(ap) = ap {
                self.push(epoch, split, Some(c), "ap", *ap);
            }
        }
    }

    pub fn get(&self, epoch: usize, split: Split, class: Option<usize>, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.split == split && r.class == class && r.metric == metric)
            .map(|r| r.value)
    }

    /// Values of one metric across epochs, in epoch order.
    pub fn series(&self, split: Split, class: Option<usize>, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.class == class && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,class,metric,value\n");
        for r in &self.rows {
            let class = r.class.map_or_else(|| "all".to_string(), |c| c.to_string());
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.split.name(), class, r.metric, r.value);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: History,
    /// Flattened parameters after each epoch.
    pub trajectory: Vec<Vec<f64>>,
}

fn subset_targets(targets: &Targets, classes: usize, idx: &[usize]) -> Targets {
    match targets {
        Targets::Single(l) => Targets::Single(idx.iter().map(|&i| l[i]).collect()),
        Targets::Multi(h) => Targets::Multi(
            idx.iter()
                .flat_map(|&i| h[i * classes..(i + 1) * classes].iter().copied())
                .collect(),
        ),
    }
}

/// Population covariance (row-major `dim × dim`) of the output-layer inputs
/// for each class; zero for classes without samples.
pub fn class_feature_covariances(model: &ModelParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let Targets::Single(labels) = data.targets() else {
        return Err(Error::invalid("class covariances need single-label data"));
    };
    let feats: Vec<Vec<f64>> = (0..data.len()).map(|i| model.features(data.row(i))).collect();
    let dim = model.output_layer().inputs;
    let c = data.classes();
    let mut mean = vec![vec![0.0; dim]; c];
    let mut count = vec![0usize; c];
    for (f, &k) in feats.iter().zip(labels) {
        count[k] += 1;
        for (m, v) in mean[k].iter_mut().zip(f) {
            *m += v;
        }
    }
    for (m, &n) in mean.iter_mut().zip(&count) {
        if n > 0 {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let mut cov = vec![vec![0.0; dim * dim]; c];
    for (f, &k) in feats.iter().zip(labels) {
        let d: Vec<f64> = f.iter().zip(&mean[k]).map(|(a, b)| a - b).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov[k][i * dim + j] += d[i] * d[j];
            }
        }
    }
    for (s, &n) in cov.iter_mut().zip(&count) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(cov)
}

/// Perturbed loss of a batch for fixed offsets, by forward evaluation only.
pub fn batch_loss(model: &ModelParams, inputs: &[&[f64]], targets: &Targets, offsets: &BatchOffsets) -> Result<f64> {
    let logits: Vec<f64> = inputs.iter().flat_map(|x| model.logits(x)).collect();
    let batch = LogitBatch::new(model.classes(), logits, targets.clone())?;
    Ok(loss_with_offsets(&batch, offsets)?.loss)
}

/// Perturbed loss and its parameter gradient for fixed offsets.
pub fn batch_gradient(
    model: &ModelParams,
    inputs: &[&[f64]],
    targets: &Targets,
    offsets: &BatchOffsets,
) -> Result<(f64, Gradients)> {
    let logits: Vec<f64> = inputs.iter().flat_map(|x| model.logits(x)).collect();
    let batch = LogitBatch::new(model.classes(), logits, targets.clone())?;
    let eval = loss_with_offsets(&batch, offsets)?;
    Ok((eval.loss, model.backward(inputs, &eval.dlogits)?))
}

/// Mini-batch SGD. `test` is only evaluated, never trained on.
pub fn train(config: &TrainConfig, data: &Dataset, test: Option<&Dataset>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(t) = test {
        if t.dim() != data.dim() || t.classes() != data.classes() || t.targets().kind() != data.targets().kind() {
            return Err(Error::invalid("test set does not match the training set"));
        }
    }
    let classes = data.classes();
    let root = RngStream::new(config.seed, 0);
    let mut model = ModelParams::init(config.architecture, data.dim(), classes, root.substream(0))?;
    let mut perturber = Perturber::new(config.method.clone(), data.profile().clone())?;
    let mut sgd = Sgd::new(config.learning_rate, config.momentum, config.weight_decay);
    let mut shuffle_rng = root.substream(1).rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();
    let mut trajectory = Vec::with_capacity(config.epochs);
    let kind = data.targets().kind();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        if perturber.needs_covariances() {
            perturber.set_covariances(class_feature_covariances(&model, data)?);
        }
        let mut tally = ClassTally::new(classes);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| data.row(i)).collect();
            let logits: Vec<f64> = inputs.iter().flat_map(|x| model.logits(x)).collect();
            let batch =
                LogitBatch::new(classes, logits, subset_targets(data.targets(), classes, idx)).map_err(|e| {
                    Error::Diverged {
                        epoch,
                        batch: b,
                        detail: e.to_string(),
                    }
                })?;
            let rows: Vec<Vec<f64>> = if perturber.needs_covariances() {
                let out = model.output_layer();
                (0..out.outputs).map(|o| out.row(o).to_vec()).collect()
            } else {
                Vec::new()
            };
            let offsets = perturber.offsets(&batch, &rows)?;
            let eval = loss_with_offsets(&batch, &offsets)?;
            if !eval.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss is {}", eval.loss),
                });
            }
            loss_sum += eval.loss * idx.len() as f64;
            tally.merge(&eval.tally);
            let grads = model.backward(&inputs, &eval.dlogits)?;
            sgd.step(&mut model, &grads);
            if !model.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "non-finite parameter after the update".into(),
                });
            }
        }
        history.push(epoch, Split::Train, None, "loss", loss_sum / data.len() as f64);
        if let Some(t) = perturber.tau() {
            history.push(epoch, Split::Train, None, "tau", t);
        }
        for c in 0..classes {
            match kind {
                TaskKind::SingleLabel => {
                    if let Some(v) = tally.relative(c, 0) {
                        history.push(epoch, Split::Train, Some(c), "loss_variation", v);
                    }
                }
                TaskKind::MultiLabel => {
                    if let Some(v) = tally.relative(c, 0) {
                        history.push(epoch, Split::Train, Some(c), "loss_variation_pos", v);
                    }
                    if let Some(v) = tally.relative(c, 1) {
                        history.push(epoch, Split::Train, Some(c), "loss_variation_neg", v);
                    }
                }
            }
        }
        history.push_metrics(epoch, Split::Train, &evaluate(&model, data)?);
        if let Some(t) = test {
            history.push_metrics(epoch, Split::Test, &evaluate(&model, t)?);
        }
        trajectory.push(model.flat_params());
    }
    Ok(TrainOutcome {
        model,
        history,
        trajectory,
    })
}
