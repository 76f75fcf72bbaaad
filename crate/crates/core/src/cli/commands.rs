use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{
    load, parse_bound_form, parse_mode, to_toml, AnalyzeFile, DatagenFile, MethodSection, SearchSection, SweepFile,
    TrainFile,
};
use super::Output;
use crate::baselines::{
    isda_offset, la_offset, ldam_offset, relative_loss_variation, relative_loss_variation_multilabel, IsdaInputs,
    LcParams, NtrLoss, PlainBinary,
};
use crate::batch::{LogitBatch, Targets, TaskKind};
use crate::data::{load_csv, Dataset};
use crate::error::{Error, Result};
use crate::io::{create_dir_all, read_to_string, write_atomic};
use crate::lpl::{
    class_mean_confidence, class_mean_confidence_multilabel, class_offsets, compute_bounds, split_by_index,
    split_by_performance, MultilabelPerturbation, PerturbationSpec, SplitMode,
};
use crate::math::RngStream;
use crate::theory::mc::MIN_SAMPLES;
use crate::theory::sweep::{sweep, McOptions, SweptParam};
use crate::theory::{trend_conditions, Trend};
use crate::train::{
    class_feature_covariances, conjecture_report, evaluate, train, Metrics, ModelParams, TrainConfig, Trial,
};

const RESOLVED: &str = "config.resolved.toml";

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn trend_name(t: Option<Trend>) -> &'static str {
    match t {
        Some(Trend::Increasing) => "increasing",
        Some(Trend::Decreasing) => "decreasing",
        None => "not monotone",
    }
}

pub fn theory_sweep(config: &Path, with_mc: bool, out: Option<&Path>, seed: Option<u64>) -> Result<Output> {
    let mut f: SweepFile = load(config)?;
    if let Some(s) = seed {
        f.seed = s;
    }
    f.mc.enabled |= with_mc;
    let (scenario, p) = f.theory.resolve()?;
    let swept: SweptParam = f.sweep.param.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let grid = f.sweep.grid()?;
    if f.mc.enabled && f.mc.samples < MIN_SAMPLES {
        return Err(Error::Config(format!("mc.samples must be at least {MIN_SAMPLES}")));
    }
    let mc = f.mc.enabled.then(|| McOptions {
        samples: f.mc.samples,
        rng: RngStream::new(f.seed, 0),
    });
    let table = sweep(scenario, &p, swept, &grid, mc)?;
    let feasible = table.feasible_rows().count();
    if feasible == 0 {
        return Err(Error::Infeasible(format!(
            "no point of the {} grid is feasible",
            swept.name()
        )));
    }
    let (plus, minus) = table.trends(1e-12);
    let c = trend_conditions(&p);
    let summary = format!(
        "{scenario} sweep over {}: {feasible}/{} feasible; err_plus {}, err_minus {}; \
         conditions: rho_plus_helps_positive={} rho_minus_helps_positive={} \
         class_imbalance_window={} variance_dominant={}\n",
        swept.name(),
        grid.len(),
        trend_name(plus),
        trend_name(minus),
        c.rho_plus_helps_positive,
        c.rho_minus_helps_positive,
        c.class_imbalance_window,
        c.variance_dominant,
    );
    match out {
        Some(dir) => {
            create_dir_all(dir)?;
            write_atomic(&dir.join("sweep.csv"), table.to_csv().as_bytes())?;
            write_atomic(&dir.join("totals.csv"), table.totals_csv().as_bytes())?;
            write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
            write_atomic(&dir.join(RESOLVED), to_toml(&f)?.as_bytes())?;
            Ok(Output {
                stdout: summary,
                stderr: String::new(),
            })
        }
        None => Ok(Output {
            stdout: table.to_csv(),
            stderr: summary,
        }),
    }
}

fn final_csv(train: &Metrics, test: Option<&Metrics>) -> String {
    let mut out = String::from("split,class,metric,value\n");
    for (split, m) in std::iter::once(("train", train)).chain(test.map(|m| ("test", m))) {
        if let Some(e) = m.top1_error {
            let _ = writeln!(out, "{split},all,top1_error,{e}");
        }
        for (c, e) in m.class_error.iter().enumerate() {
            if let Some(e) = e {
                let _ = writeln!(out, "{split},{c},top1_error,{e}");
            }
        }
        if let Some(v) = m.mean_ap {
            let _ = writeln!(out, "{split},all,map,{v}");
        }
        for (c, ap) in m.class_ap.iter().enumerate() {
            if let Some(ap) = ap {
                let _ = writeln!(out, "{split},{c},ap,{ap}");
            }
        }
    }
    out
}

/// Validation score, lower is better: mean per-class error, or `1 − mAP`.
fn selection_score(m: &Metrics) -> f64 {
    match m.mean_ap {
        Some(map) => 1.0 - map,
        None => {
            let present: Vec<f64> = m.class_error.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len().max(1) as f64
        }
    }
}

/// Holds out `fraction` of each class (at least one sample of classes with two
/// or more); multi-label sets are split by row.
fn validation_split(data: &Dataset, fraction: f64, rng: RngStream) -> Result<(Dataset, Dataset)> {
    use rand::seq::SliceRandom;
    let mut r = rng.rng();
    let mut fit = Vec::new();
    let mut held = Vec::new();
    let groups: Vec<Vec<usize>> = match data.targets() {
        Targets::Single(labels) => {
            let mut g = vec![Vec::new(); data.classes()];
            for (i, &k) in labels.iter().enumerate() {
                g[k].push(i);
            }
            g
        }
        Targets::Multi(_) => vec![(0..data.len()).collect()],
    };
    for mut g in groups {
        g.shuffle(&mut r);
        let mut k = (g.len() as f64 * fraction).round() as usize;
        if g.len() >= 2 {
            k = k.clamp(1, g.len() - 1);
        } else {
            k = 0;
        }
        held.extend_from_slice(&g[..k]);
        fit.extend_from_slice(&g[k..]);
    }
    fit.sort_unstable();
    held.sort_unstable();
    if held.is_empty() {
        return Err(Error::Config("the validation split is empty".into()));
    }
    Ok((data.subset(&fit)?, data.subset(&held)?))
}

struct SearchResult {
    chosen: MethodSection,
    table: String,
}

fn search(
    base: &MethodSection,
    grid: &SearchSection,
    f: &TrainFile,
    data: &Dataset,
    seed: u64,
) -> Result<SearchResult> {
    let axes = grid.axes(data.classes())?;
    let mut combos: Vec<Vec<(&str, f64)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push((*key, v));
                    c
                })
            })
            .collect();
    }
    let (fit, held) = validation_split(data, grid.validation_fraction, RngStream::new(seed, 3))?;
    let scored: Vec<(MethodSection, String, f64)> = combos
        .par_iter()
        .map(|combo| {
            let mut section = base.clone();
            for &(k, v) in combo {
                section = section.with_value(k, v)?;
            }
            let cfg = f.train.resolve(seed, section.resolve()?)?;
            let out = train(&cfg, &fit, None)?;
            let score = selection_score(&evaluate(&out.model, &held)?);
            let label = combo
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            Ok((section, label, score))
        })
        .collect::<Result<_>>()?;
    let mut table = String::from("setting,validation_score\n");
    let mut best = 0;
    for (i, (_, label, score)) in scored.iter().enumerate() {
        let _ = writeln!(table, "{label},{score}");
        if score < &scored[best].2 {
            best = i;
        }
    }
    Ok(SearchResult {
        chosen: scored[best].0.clone(),
        table,
    })
}

fn write_run(
    dir: &Path,
    model: &ModelParams,
    history: &str,
    train_m: &Metrics,
    test_m: Option<&Metrics>,
) -> Result<()> {
    create_dir_all(dir)?;
    write_atomic(&dir.join("history.csv"), history.as_bytes())?;
    write_atomic(&dir.join("final.csv"), final_csv(train_m, test_m).as_bytes())?;
    write_atomic(&dir.join("model.txt"), model.to_text().as_bytes())
}

fn check_supported(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    if cfg.method.supports(data.targets().kind()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "method {} does not apply to {} data",
            cfg.method.name(),
            match data.targets().kind() {
                TaskKind::SingleLabel => "single-label",
                TaskKind::MultiLabel => "multi-label",
            }
        )))
    }
}

pub fn train_cmd(config: &Path, out: &Path, seed: Option<u64>) -> Result<Output> {
    let mut f: TrainFile = load(config)?;
    if let Some(s) = seed {
        f.seed = s;
    }
    f.data.check_files(&config_dir(config))?;
    let (train_set, test_set) = f.data.build(f.seed)?;
    let mut stdout = String::new();
    create_dir_all(out)?;
    if let Some(grid) = f.search.clone() {
        let found = search(&f.method, &grid, &f, &train_set, f.seed)?;
        write_atomic(&out.join("search.csv"), found.table.as_bytes())?;
        let _ = writeln!(
            stdout,
            "search chose {}",
            to_toml(&found.chosen)?.replace('\n', " ").trim()
        );
        f.method = found.chosen;
    }
    let cfg = f.train.resolve(f.seed, f.method.resolve()?)?;
    check_supported(&cfg, &train_set)?;
    write_atomic(&out.join(RESOLVED), to_toml(&f)?.as_bytes())?;

    let run = train(&cfg, &train_set, test_set.as_ref())?;
    let train_m = evaluate(&run.model, &train_set)?;
    let test_m = test_set.as_ref().map(|t| evaluate(&run.model, t)).transpose()?;
    write_run(out, &run.model, &run.history.to_csv(), &train_m, test_m.as_ref())?;
    let _ = writeln!(
        stdout,
        "trained {} for {} epochs; outputs in {}",
        cfg.method.name(),
        cfg.epochs,
        out.display()
    );

    if let Some(b) = &f.baseline {
        let base_cfg = cfg.with_method(b.method.resolve()?);
        check_supported(&base_cfg, &train_set)?;
        let base = train(&base_cfg, &train_set, test_set.as_ref())?;
        let base_train = evaluate(&base.model, &train_set)?;
        let base_test = test_set.as_ref().map(|t| evaluate(&base.model, t)).transpose()?;
        write_run(
            &out.join("baseline"),
            &base.model,
            &base.history.to_csv(),
            &base_train,
            base_test.as_ref(),
        )?;

        let (ours, theirs, split) = match (&test_m, &base_test) {
            (Some(o), Some(t)) => (o, t, "test"),
            _ => (&train_m, &base_train, "train"),
        };
        let single = ours.mean_ap.is_none();
        let mut cmp = format!(
            "class,{}_{},{}_{}\n",
            base_cfg.method.name(),
            if single { "error" } else { "ap" },
            cfg.method.name(),
            if single { "error" } else { "ap" }
        );
        let (a, bv) = if single {
            (&theirs.class_error, &ours.class_error)
        } else {
            (&theirs.class_ap, &ours.class_ap)
        };
        let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in 0..train_set.classes() {
            let _ = writeln!(cmp, "{c},{},{}", cell(&a[c]), cell(&bv[c]));
        }
        write_atomic(&out.join("comparison.csv"), cmp.as_bytes())?;
        let tail = train_set.classes() - 1;
        let _ = writeln!(
            stdout,
            "tail class {tail} {split} {}: {} {} -> {} {}",
            if single { "error" } else { "AP" },
            base_cfg.method.name(),
            cell(&a[tail]),
            cfg.method.name(),
            cell(&bv[tail])
        );

        if !b.report_seeds.is_empty() {
            if !single {
                return Err(Error::Config("the conjecture report needs single-label data".into()));
            }
            let trials = b
                .report_seeds
                .iter()
                .map(|&s| {
                    let (tr, te) = f.data.build(s)?;
                    let te = te.ok_or_else(|| Error::Config("the conjecture report needs a test split".into()))?;
                    Ok(Trial {
                        seed: s,
                        train: tr,
                        test: te,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = conjecture_report(&base_cfg, &cfg, &trials)?;
            write_atomic(&out.join("conjecture.csv"), report.to_csv().as_bytes())?;
            let (be, pe) = report.mean_errors(tail);
            let _ = writeln!(
                stdout,
                "conjecture report, tail class {tail}: {}/{} seeds agree; mean test error {be} -> {pe}",
                report.agreements(tail),
                trials.len()
            );
        }
    }
    Ok(Output {
        stdout,
        stderr: String::new(),
    })
}

fn lpl_spec(section: &Option<MethodSection>) -> Result<(PerturbationSpec, crate::lpl::BoundForm)> {
    match section {
        Some(MethodSection::Lpl {
            mode,
            tau,
            epsilon,
            delta_epsilon,
            alpha,
            bound_form,
            ..
        }) => Ok((
            PerturbationSpec::new(parse_mode(mode)?, *tau, *epsilon, *delta_epsilon, *alpha)
                .map_err(|e| Error::Config(e.to_string()))?,
            parse_bound_form(bound_form)?,
        )),
        _ => Err(Error::Config(
            "analysing lpl needs an [analyze.lpl] table with name = \"lpl\"".into(),
        )),
    }
}

fn required<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Config(format!("analyze.{key} is required for this method")))
}

pub fn analyze_cmd(config: &Path, out: &Path, seed: Option<u64>) -> Result<Output> {
    let mut f: AnalyzeFile = load(config)?;
    if let Some(s) = seed {
        f.seed = s;
    }
    let base = config_dir(config);
    let resolve = |p: &PathBuf| -> Result<PathBuf> {
        let p = if p.is_relative() { base.join(p) } else { p.clone() };
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Config(format!("input file {} does not exist", p.display())))
        }
    };
    let (model, logits_path) = match (&f.source.model, &f.source.logits) {
        (Some(m), None) => (Some(resolve(m)?), None),
        (None, Some(l)) => (None, Some(resolve(l)?)),
        _ => return Err(Error::Config("source needs exactly one of `model` or `logits`".into())),
    };
    if let Some(d) = f.data.as_mut() {
        d.check_files(&base)?;
    }

    let (batch, profile, isda) = match (model, logits_path) {
        (Some(path), _) => {
            let data = f
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("analysing a model needs a [data] table".into()))?;
            let model = ModelParams::from_text(&read_to_string(&path)?, &path)?;
            let (train_set, _) = data.build(f.seed)?;
            if model.dim() != train_set.dim() || model.classes() != train_set.classes() {
                return Err(Error::Config("the model does not match the data".into()));
            }
            let batch = LogitBatch::new(
                train_set.classes(),
                model.logits_flat(train_set.features()),
                train_set.targets().clone(),
            )?;
            let isda = match train_set.targets().kind() {
                TaskKind::SingleLabel => {
                    let out = model.output_layer();
                    let rows: Vec<Vec<f64>> = (0..out.outputs).map(|o| out.row(o).to_vec()).collect();
                    Some((class_feature_covariances(&model, &train_set)?, rows))
                }
                TaskKind::MultiLabel => None,
            };
            (batch, train_set.profile().clone(), isda)
        }
        (None, Some(path)) => {
            let ds = load_csv(&path)?;
            if ds.dim() != ds.classes() {
                return Err(Error::Config(format!(
                    "logit dump has {} columns for {} classes",
                    ds.dim(),
                    ds.classes()
                )));
            }
            let batch = LogitBatch::new(ds.classes(), ds.features().to_vec(), ds.targets().clone())?;
            (batch, ds.profile().clone(), None)
        }
        (None, None) => unreachable!("one source is always set"),
    };

    let a = &f.analyze;
    let buckets = profile.terciles();
    let group = |c: usize| ["head", "medium", "tail"][buckets[c]];
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("method,class,group,polarity,variation\n");
    let mut skipped = String::new();
    for name in &a.methods {
        match batch.kind() {
            TaskKind::SingleLabel => {
                let labels = batch.labels()?;
                let per_class: Vec<Vec<f64>> = match name.as_str() {
                    "none" => vec![vec![0.0; batch.classes()]; batch.classes()],
                    "la" => vec![la_offset(&profile, a.lambda)?; batch.classes()],
                    "ldam" => {
                        let m = required(&a.ldam_margin, "ldam_margin")?;
                        (0..batch.classes())
                            .map(|k| ldam_offset(&profile, k, m))
                            .collect::<Result<_>>()?
                    }
                    "isda" => {
                        let Some((covs, rows)) = &isda else {
                            let _ = writeln!(skipped, "isda skipped: it needs a saved model");
                            continue;
                        };
                        let inputs =
                            IsdaInputs::new(covs.clone(), rows.clone(), required(&a.isda_strength, "isda_strength")?)?;
                        (0..batch.classes())
                            .map(|k| isda_offset(&inputs, k))
                            .collect::<Result<_>>()?
                    }
                    "lpl" => {
                        let (spec, form) = lpl_spec(&a.lpl)?;
                        spec.check_classes(batch.classes())
                            .map_err(|e| Error::Config(e.to_string()))?;
                        let conf = class_mean_confidence(&batch)?;
                        let split = match spec.mode {
                            SplitMode::Performance => split_by_performance(&conf, spec.tau),
                            SplitMode::Index => split_by_index(batch.classes(), spec.tau),
                            SplitMode::MultiLabel => {
                                return Err(Error::Config("multilabel mode on single-label data".into()))
                            }
                        };
                        class_offsets(&batch, &split, &compute_bounds(&conf, spec.tau, &spec, form)?)?
                    }
                    "ntr" | "lc" => {
                        let _ = writeln!(skipped, "{name} skipped: defined for multi-label data only");
                        continue;
                    }
                    other => return Err(Error::Config(format!("unknown method {other:?} in analyze.methods"))),
                };
                let offsets: Vec<Vec<f64>> = labels.iter().map(|&k| per_class[k].clone()).collect();
                for (c, v) in relative_loss_variation(&batch, &offsets)?.into_iter().enumerate() {
                    let _ = writeln!(csv, "{name},{c},{},all,{}", group(c), cell(v));
                }
            }
            TaskKind::MultiLabel => {
                let lc;
                let ntr;
                let lpl;
                let loss: &dyn crate::baselines::BranchLoss = match name.as_str() {
                    "none" => &PlainBinary,
                    "ntr" => {
                        ntr = NtrLoss::new(
                            &profile,
                            required(&a.ntr_lambda, "ntr_lambda")?,
                            required(&a.ntr_psi, "ntr_psi")?,
                        )?;
                        &ntr
                    }
                    "lc" => {
                        lc = LcParams::new(
                            required(&a.lc_pos_means, "lc_pos_means")?,
                            required(&a.lc_neg_means, "lc_neg_means")?,
                        )
                        .map_err(|e| Error::Config(e.to_string()))?;
                        if lc.pos_means.len() != batch.classes() {
                            return Err(Error::Config("LC means do not match the class count".into()));
                        }
                        &lc
                    }
                    "lpl" => {
                        let (spec, form) = lpl_spec(&a.lpl)?;
                        if spec.mode != SplitMode::MultiLabel {
                            return Err(Error::Config("multi-label data needs the multilabel split mode".into()));
                        }
                        spec.check_classes(batch.classes())
                            .map_err(|e| Error::Config(e.to_string()))?;
                        let conf = class_mean_confidence_multilabel(&batch)?;
                        let bounds = compute_bounds(&conf, spec.tau, &spec, form)?;
                        lpl = MultilabelPerturbation::new(spec.tau, bounds.bounds());
                        &lpl
                    }
                    "la" | "isda" | "ldam" => {
                        let _ = writeln!(skipped, "{name} skipped: defined for single-label data only");
                        continue;
                    }
                    other => return Err(Error::Config(format!("unknown method {other:?} in analyze.methods"))),
                };
                for (c, v) in relative_loss_variation_multilabel(&batch, loss)?
                    .into_iter()
                    .enumerate()
                {
                    let _ = writeln!(csv, "{name},{c},{},pos,{}", group(c), cell(v.positive));
                    let _ = writeln!(csv, "{name},{c},{},neg,{}", group(c), cell(v.negative));
                }
            }
        }
    }
    create_dir_all(out)?;
    write_atomic(&out.join("variation.csv"), csv.as_bytes())?;
    write_atomic(&out.join(RESOLVED), to_toml(&f)?.as_bytes())?;
    Ok(Output {
        stdout: format!(
            "relative loss variations written to {}\n",
            out.join("variation.csv").display()
        ),
        stderr: skipped,
    })
}

pub fn datagen_cmd(config: &Path, out: &Path, seed: Option<u64>) -> Result<Output> {
    let mut f: DatagenFile = load(config)?;
    if let Some(s) = seed {
        f.seed = s;
    }
    f.data.check_files(&config_dir(config))?;
    let (train_set, test_set) = f.data.build(f.seed)?;
    let ds = match f.split.as_str() {
        "train" => train_set,
        "test" => test_set.ok_or_else(|| Error::Config("this data source has no test split".into()))?,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?}; expected train or test"
            )))
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir_all(parent)?;
    }
    ds.save(out)?;
    let mut resolved = out.as_os_str().to_owned();
    resolved.push(".config.toml");
    write_atomic(Path::new(&resolved), to_toml(&f)?.as_bytes())?;
    Ok(Output {
        stdout: format!(
            "wrote {} rows ({} classes, counts {:?}) to {}\n",
            ds.len(),
            ds.classes(),
            ds.profile().counts(),
            out.display()
        ),
        stderr: String::new(),
    })
}
