//! TOML experiment files. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::LcParams;
use crate::data::{gen_gaussian_binary, gen_longtail_multiclass, gen_multilabel, load_csv, Dataset, MultilabelParams};
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::lpl::{BoundForm, PerturbationSpec, SplitMode};
use crate::math::RngStream;
use crate::theory::{Scenario, TheoryParams};
use crate::train::{Architecture, LplSettings, Method, TauRule, TrainConfig};

fn one() -> f64 {
    1.0
}

fn default_mc_samples() -> usize {
    1_000_000
}

fn default_validation() -> f64 {
    0.2
}

fn default_bound_form() -> String {
    "absolute".into()
}

fn default_tau_rule() -> String {
    "fixed".into()
}

fn default_architecture() -> String {
    "linear".into()
}

fn default_split() -> String {
    "train".into()
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Parses a config file; `seed_override` replaces the file's `seed`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
    toml::from_str(&text).map_err(|e| config_err(path, e))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialise the resolved config: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub scenario: String,
    pub dim: usize,
    pub eta: f64,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub k: f64,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub rho_plus: f64,
    #[serde(default = "one")]
    pub rho_minus: f64,
}

impl TheorySection {
    pub fn resolve(&self) -> Result<(Scenario, TheoryParams)> {
        let scenario: Scenario = self.scenario.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        let p = TheoryParams {
            dim: self.dim,
            eta: self.eta,
            sigma: self.sigma,
            gamma: self.gamma,
            k: self.k,
            epsilon: self.epsilon,
            rho_plus: self.rho_plus,
            rho_minus: self.rho_minus,
        };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok((scenario, p))
    }
}

/// Either an explicit `values` list or `start`/`stop`/`points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n > 0 => Ok(crate::theory::sweep::linear_grid(a, b, n)),
            _ => Err(Error::Config(
                "sweep needs either a non-empty `values` list or `start`, `stop` and `points`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_mc_samples")]
    pub samples: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            enabled: false,
            samples: default_mc_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub seed: u64,
    pub theory: TheorySection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub mc: McSection,
}

/// Dataset source. Generated sets draw the training split from stream 1 and
/// the test split from stream 2 of the run seed (the multi-label generator
/// draws both from one set so they share class prototypes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSection {
    GaussianBinary {
        dim: usize,
        eta: f64,
        sigma: f64,
        gamma: f64,
        #[serde(default = "one")]
        k: f64,
        n_plus: usize,
        #[serde(default = "one")]
        test_gamma: f64,
        test_n_plus: usize,
    },
    Longtail {
        classes: usize,
        ratio: f64,
        n_head: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "one")]
        test_ratio: f64,
        test_n_head: usize,
    },
    Multilabel {
        classes: usize,
        samples: usize,
        head_frac: f64,
        label_density: f64,
        dim: usize,
        separation: f64,
        test_samples: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
    },
}

impl DataSection {
    /// Resolves relative CSV paths against `base` and checks that they exist.
    pub fn check_files(&mut self, base: &Path) -> Result<()> {
        if let DataSection::Csv { path, test_path } = self {
            for p in std::iter::once(path).chain(test_path.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Training and (if configured) test split.
    pub fn build(&self, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        let theory = |dim, eta, sigma, gamma, k| TheoryParams {
            dim,
            eta,
            sigma,
            gamma,
            k,
            epsilon: 0.0,
            rho_plus: 1.0,
            rho_minus: 1.0,
        };
        match *self {
            DataSection::GaussianBinary {
                dim,
                eta,
                sigma,
                gamma,
                k,
                n_plus,
                test_gamma,
                test_n_plus,
            } => Ok((
                gen_gaussian_binary(&theory(dim, eta, sigma, gamma, k), n_plus, RngStream::new(seed, 1))?,
                Some(gen_gaussian_binary(
                    &theory(dim, eta, sigma, test_gamma, k),
                    test_n_plus,
                    RngStream::new(seed, 2),
                )?),
            )),
            DataSection::Longtail {
                classes,
                ratio,
                n_head,
                dim,
                separation,
                test_ratio,
                test_n_head,
            } => Ok((
                gen_longtail_multiclass(classes, ratio, n_head, dim, separation, RngStream::new(seed, 1))?,
                Some(gen_longtail_multiclass(
                    classes,
                    test_ratio,
                    test_n_head,
                    dim,
                    separation,
                    RngStream::new(seed, 2),
                )?),
            )),
            DataSection::Multilabel {
                classes,
                samples,
                head_frac,
                label_density,
                dim,
                separation,
                test_samples,
            } => {
                let all = gen_multilabel(
                    &MultilabelParams {
                        classes,
                        samples: samples + test_samples,
                        head_frac,
                        label_density,
                        dim,
                        separation,
                    },
                    RngStream::new(seed, 1),
                )?;
                let train: Vec<usize> = (0..samples).collect();
                let test: Vec<usize> = (samples..samples + test_samples).collect();
                let test = (test_samples > 0).then(|| all.subset(&test)).transpose()?;
                Ok((all.subset(&train)?, test))
            }
            DataSection::Csv {
                ref path,
                ref test_path,
            } => Ok((load_csv(path)?, test_path.as_deref().map(load_csv).transpose()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_architecture")]
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

impl TrainSection {
    pub fn resolve(&self, seed: u64, method: Method) -> Result<TrainConfig> {
        let architecture = match (self.architecture.as_str(), self.hidden) {
            ("linear", None) => Architecture::Linear,
            ("mlp", Some(hidden)) => Architecture::Mlp { hidden },
            ("mlp", None) => return Err(Error::Config("architecture mlp needs `hidden`".into())),
            ("linear", Some(_)) => return Err(Error::Config("`hidden` only applies to the mlp architecture".into())),
            (other, _) => {
                return Err(Error::Config(format!(
                    "unknown architecture {other:?}; expected linear or mlp"
                )))
            }
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            architecture,
            method,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Perturbation method, selected by `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum MethodSection {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "la")]
    La { lambda: f64 },
    #[serde(rename = "isda")]
    Isda { strength: f64 },
    #[serde(rename = "ldam")]
    Ldam { margin: f64 },
    #[serde(rename = "ntr")]
    Ntr { lambda: f64, psi: f64 },
    #[serde(rename = "lc")]
    Lc { pos_means: Vec<f64>, neg_means: Vec<f64> },
    #[serde(rename = "lpl")]
    Lpl {
        mode: String,
        tau: f64,
        epsilon: f64,
        #[serde(default)]
        delta_epsilon: f64,
        alpha: f64,
        #[serde(default = "default_bound_form")]
        bound_form: String,
        #[serde(default = "default_tau_rule")]
        tau_rule: String,
    },
    #[serde(rename = "la+lpl")]
    LaLpl {
        lambda: f64,
        mode: String,
        tau: f64,
        epsilon: f64,
        #[serde(default)]
        delta_epsilon: f64,
        alpha: f64,
        #[serde(default = "default_bound_form")]
        bound_form: String,
        #[serde(default = "default_tau_rule")]
        tau_rule: String,
    },
}

pub fn parse_mode(s: &str) -> Result<SplitMode> {
    match s {
        "performance" => Ok(SplitMode::Performance),
        "index" => Ok(SplitMode::Index),
        "multilabel" => Ok(SplitMode::MultiLabel),
        other => Err(Error::Config(format!(
            "unknown split mode {other:?}; expected performance, index or multilabel"
        ))),
    }
}

pub fn parse_bound_form(s: &str) -> Result<BoundForm> {
    match s {
        "absolute" => Ok(BoundForm::AbsoluteDifference),
        "ratio" => Ok(BoundForm::Ratio),
        other => Err(Error::Config(format!(
            "unknown bound form {other:?}; expected absolute or ratio"
        ))),
    }
}

fn parse_tau_rule(s: &str) -> Result<TauRule> {
    match s {
        "fixed" => Ok(TauRule::Fixed),
        "running-mean" => Ok(TauRule::RunningMean),
        other => Err(Error::Config(format!(
            "unknown tau rule {other:?}; expected fixed or running-mean"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn lpl_settings(
    mode: &str,
    tau: f64,
    epsilon: f64,
    delta_epsilon: f64,
    alpha: f64,
    bound_form: &str,
    tau_rule: &str,
) -> Result<LplSettings> {
    Ok(LplSettings {
        spec: PerturbationSpec::new(parse_mode(mode)?, tau, epsilon, delta_epsilon, alpha)
            .map_err(|e| Error::Config(e.to_string()))?,
        form: parse_bound_form(bound_form)?,
        tau_rule: parse_tau_rule(tau_rule)?,
    })
}

impl MethodSection {
    pub fn resolve(&self) -> Result<Method> {
        Ok(match self {
            MethodSection::None => Method::None,
            MethodSection::La { lambda } => Method::La { lambda: *lambda },
            MethodSection::Isda { strength } => Method::Isda { strength: *strength },
            MethodSection::Ldam { margin } => Method::Ldam { margin: *margin },
            MethodSection::Ntr { lambda, psi } => Method::Ntr {
                lambda: *lambda,
                psi: *psi,
            },
            MethodSection::Lc { pos_means, neg_means } => Method::Lc(
                LcParams::new(pos_means.clone(), neg_means.clone()).map_err(|e| Error::Config(e.to_string()))?,
            ),
            MethodSection::Lpl {
                mode,
                tau,
                epsilon,
                delta_epsilon,
                alpha,
                bound_form,
                tau_rule,
            } => Method::Lpl(lpl_settings(
                mode,
                *tau,
                *epsilon,
                *delta_epsilon,
                *alpha,
                bound_form,
                tau_rule,
            )?),
            MethodSection::LaLpl {
                lambda,
                mode,
                tau,
                epsilon,
                delta_epsilon,
                alpha,
                bound_form,
                tau_rule,
            } => Method::LaLpl {
                lambda: *lambda,
                lpl: lpl_settings(mode, *tau, *epsilon, *delta_epsilon, *alpha, bound_form, tau_rule)?,
            },
        })
    }

    /// The same section with one numeric parameter replaced.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self> {
        let mut table = toml::Table::try_from(self)
            .map_err(|e| Error::Config(format!("cannot rewrite the method section: {e}")))?;
        if !table.contains_key(key) {
            return Err(Error::Config(format!(
                "method {} has no parameter `{key}` to search over",
                table.get("name").and_then(|v| v.as_str()).unwrap_or("?")
            )));
        }
        table.insert(key.to_string(), toml::Value::Float(value));
        table
            .try_into()
            .map_err(|e| Error::Config(format!("searched value for `{key}`: {e}")))
    }
}

/// Hyper-parameter grid. Each listed key must exist in the method section;
/// `tau_times_classes` sets `tau` to the value times the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_times_classes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    /// Share of each class held out to score the grid.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

impl SearchSection {
    /// Axes `(method key, values)` in a fixed order.
    pub fn axes(&self, classes: usize) -> Result<Vec<(&'static str, Vec<f64>)>> {
        if !self.tau.is_empty() && !self.tau_times_classes.is_empty() {
            return Err(Error::Config(
                "give either `tau` or `tau_times_classes`, not both".into(),
            ));
        }
        let tau: Vec<f64> = if self.tau_times_classes.is_empty() {
            self.tau.clone()
        } else {
            self.tau_times_classes.iter().map(|f| f * classes as f64).collect()
        };
        let axes: Vec<(&'static str, Vec<f64>)> = [
            ("alpha", self.alpha.clone()),
            ("epsilon", self.epsilon.clone()),
            ("delta_epsilon", self.delta_epsilon.clone()),
            ("tau", tau),
            ("lambda", self.lambda.clone()),
        ]
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .collect();
        if axes.is_empty() {
            return Err(Error::Config("search section lists no values".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must be in (0, 1)".into()));
        }
        Ok(axes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub method: MethodSection,
    /// Data/training seeds of the paired conjecture report; none skips it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub report_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainSection,
    pub method: MethodSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
}

/// Where the analysed logits come from: a saved model applied to the
/// configured data, or a logit dump in dataset CSV form (features = logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub methods: Vec<String>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isda_strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldam_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ntr_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ntr_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lc_pos_means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lc_neg_means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpl: Option<MethodSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    pub source: SourceSection,
    pub analyze: AnalyzeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenFile {
    #[serde(default)]
    pub seed: u64,
    /// `train` or `test`.
    #[serde(default = "default_split")]
    pub split: String,
    pub data: DataSection,
}
