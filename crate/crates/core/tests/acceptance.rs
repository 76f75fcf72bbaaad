//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The report is printed even without `--nocapture`.
//! Every criterion runs even when an earlier one fails; the test fails at the
//! end if any line reads FAIL.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use lpl::baselines::{mean_multilabel_loss, ntr_loss, PlainBinary};
use lpl::batch::{ClassProfile, LogitBatch, Targets, TaskKind};
use lpl::cli::config::{load, SweepFile, TrainFile};
use lpl::lpl::{
    combined_la_lpl_loss, lpl_loss_multilabel, lpl_loss_single, multilabel_delta, pgd_perturb, split_by_index,
    BoundForm, BoundVector, Direction, MultilabelPerturbation, PerturbationSpec, SplitMode,
};
use lpl::math::{ce_logit_gradient, cross_entropy, cross_entropy_index, RngStream};
use lpl::theory::mc::mc_error_estimate;
use lpl::theory::sweep::{sweep, SweptParam};
use lpl::theory::{
    bias_search_range, check_feasible, errors, grid_search_bias, is_monotone, optimal_bias, Scenario, TheoryParams,
    Trend,
};
use lpl::train::{
    batch_gradient, batch_loss, conjecture_report, train, Architecture, BatchOffsets, BinaryShift, LplSettings, Method,
    ModelParams, TauRule, TrainConfig, Trial,
};

// Tolerances and sizes, as stated by the criteria.
const MC_SAMPLES: usize = 1_000_000;
const MC_DRAWS: usize = 50;
const MC_SE_MULTIPLE: f64 = 3.0;
const MC_PASS_SHARE: f64 = 0.95;
const MC_BUDGET: Duration = Duration::from_secs(300);
const BIAS_STEP: f64 = 1e-3;
const BIAS_TOL: f64 = 2e-3;
const SWEEP_POINTS: usize = 50;
const MONOTONE_SLACK: f64 = 1e-12;
const LOGIT_FD_TOL: f64 = 1e-6;
const PARAM_FD_REL_TOL: f64 = 1e-5;
const FD_INSTANCES: usize = 100;
const PGD_BATCHES: usize = 1000;
const PGD_MAX_ALPHA: f64 = 0.03;
const PGD_GRAD_FLOOR: f64 = 1e-8;
const FIXTURE_TOL: f64 = 1e-12;
const DEGENERATE_TOL: f64 = 1e-12;
const CONJECTURE_SEEDS: usize = 5;
const CONJECTURE_MIN_AGREE: usize = 4;
const CONJECTURE_BUDGET: Duration = Duration::from_secs(120);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

fn random_feasible(rng: &mut impl Rng, sc: Scenario) -> TheoryParams {
    loop {
        let eta = rng.random_range(0.5..2.0);
        let epsilon = rng.random_range(0.0..0.9) * eta;
        let max_rho = if epsilon > 0.0 { 0.95 * eta / epsilon } else { 5.0 };
        let p = TheoryParams {
            dim: rng.random_range(1..5),
            eta,
            sigma: rng.random_range(0.5..2.0),
            gamma: rng.random_range(1.0..10.0),
            k: if sc == Scenario::UnequalVariance {
                rng.random_range(1.2..4.0)
            } else {
                1.0
            },
            epsilon,
            rho_plus: rng.random_range(0.0..max_rho),
            rho_minus: rng.random_range(0.0..max_rho),
        };
        if check_feasible(sc, &p).is_ok() && errors(sc, &p).is_ok() {
            return p;
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(2024, 0).rng();
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, sc) in Scenario::ALL.into_iter().enumerate() {
        let mut within = 0;
        for draw in 0..MC_DRAWS {
            let p = random_feasible(&mut rng, sc);
            let b = optimal_bias(sc, &p).expect("feasible draw");
            let cf = errors(sc, &p).expect("feasible draw");
            let mc = mc_error_estimate(sc, &p, b, MC_SAMPLES, RngStream::new(7, (i * MC_DRAWS + draw) as u64))
                .expect("valid draw");
            // a zero empirical error has zero binomial SE; floor it at one count
            let floor = 1.0 / MC_SAMPLES as f64;
            let ok_minus = (mc.natural.err_minus - cf.err_minus).abs() <= MC_SE_MULTIPLE * mc.se_minus.max(floor);
            let ok_plus = (mc.natural.err_plus - cf.err_plus).abs() <= MC_SE_MULTIPLE * mc.se_plus.max(floor);
            within += usize::from(ok_minus && ok_plus);
        }
        let share = within as f64 / MC_DRAWS as f64;
        pass &= share >= MC_PASS_SHARE;
        lines.push(format!("{sc} {within}/{MC_DRAWS}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed <= MC_BUDGET;
    outcome(
        pass,
        format!(
            "draws within {MC_SE_MULTIPLE} SE at n={MC_SAMPLES}: {}; {:.1}s of {}s",
            lines.join(", "),
            elapsed.as_secs_f64(),
            MC_BUDGET.as_secs()
        ),
    )
}

fn fig_params(name: &str) -> (Scenario, TheoryParams, SweptParam, Vec<f64>) {
    let f: SweepFile = load(&preset(name)).expect("preset parses");
    let (sc, p) = f.theory.resolve().expect("preset resolves");
    let swept = f.sweep.param.parse().expect("known swept parameter");
    (sc, p, swept, f.sweep.grid().expect("preset grid"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, scenario) in [
        ("sweep_first_type_rho_plus.toml", Scenario::FirstTypeBoth),
        ("sweep_class_imbalance_rho_plus.toml", Scenario::UnequalVariance),
    ] {
        let (sc, base, swept, grid) = fig_params(name);
        assert_eq!(sc, scenario);
        // the preset's own shift settings plus every point of its sweep
        for p in std::iter::once(base).chain(grid.iter().map(|&v| swept.apply(base, v))) {
            let exact = optimal_bias(sc, &p).expect("preset configuration is feasible");
            let (lo, hi) = bias_search_range(&p);
            let found = grid_search_bias(sc, &p, lo, hi, BIAS_STEP).expect("grid");
            worst = worst.max((found - exact).abs());
            checked += 1;
        }
    }
    outcome(
        worst <= BIAS_TOL,
        format!("{checked} configurations, worst |b_grid − b*| = {worst:.2e} (tolerance {BIAS_TOL:.0e})"),
    )
}

fn criterion_3() -> Outcome {
    use Trend::{Decreasing, Increasing};
    // (preset, expected err_plus trend, expected err_minus trend)
    let cases = [
        ("sweep_first_type_rho_plus.toml", Decreasing, Increasing),
        // second-type shifts: class +1 gains, class −1 loses
        ("sweep_second_type_rho_minus.toml", Decreasing, Increasing),
        ("sweep_class_imbalance_rho_plus.toml", Decreasing, Increasing),
        ("sweep_variance_imbalance_rho_minus.toml", Increasing, Decreasing),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, plus, minus) in cases {
        let (sc, p, swept, grid) = fig_params(name);
        let table = sweep(sc, &p, swept, &grid, None).expect("sweep");
        let ok = grid.len() == SWEEP_POINTS
            && table.feasible_rows().count() == SWEEP_POINTS
            && is_monotone(&table.err_plus(), plus, MONOTONE_SLACK)
            && is_monotone(&table.err_minus(), minus, MONOTONE_SLACK);
        pass &= ok;
        parts.push(format!(
            "{}: err_plus {:?}/err_minus {:?} {}",
            name.trim_end_matches(".toml"),
            plus,
            minus,
            if ok { "ok" } else { "violated" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn random_model(rng: &mut impl Rng, arch: Architecture, dim: usize, classes: usize, seed: u64) -> ModelParams {
    let mut m = ModelParams::init(arch, dim, classes, RngStream::new(seed, 0)).expect("model");
    // non-zero biases so every parameter has a generic gradient
    let params: Vec<f64> = m
        .flat_params()
        .iter()
        .map(|p| p + rng.random_range(-0.3..0.3))
        .collect();
    m.set_flat_params(&params).expect("same length");
    m
}

fn flat_gradient(grads: &[lpl::train::Layer]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias))
        .copied()
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = RngStream::new(99, 0).rng();

    // logits: cross-entropy against its analytic gradient
    let h = 1e-6;
    let mut worst_logit: f64 = 0.0;
    for _ in 0..FD_INSTANCES {
        let c = rng.random_range(2..8);
        let u: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let k = rng.random_range(0..c);
        let y: Vec<f64> = (0..c).map(|j| f64::from(u8::from(j == k))).collect();
        let g = ce_logit_gradient(&u, &y).expect("valid pair");
        for j in 0..c {
            let mut up = u.clone();
            let mut down = u.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (cross_entropy(&up, &y).unwrap() - cross_entropy(&down, &y).unwrap()) / (2.0 * h);
            worst_logit = worst_logit.max((fd - g[j]).abs());
        }
    }

    // parameters: 5-sample batches with frozen offsets, linear and MLP,
    // single-label (offsets inside the softmax) and multi-label (branch shifts)
    let h = 1e-5;
    let mut worst_param: f64 = 0.0;
    for inst in 0..FD_INSTANCES {
        let arch = if inst % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp { hidden: 4 }
        };
        let (dim, classes) = (3, 3);
        let model = random_model(&mut rng, arch, dim, classes, inst as u64);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let inputs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (targets, offsets) = match inst % 4 {
            0 | 1 => (
                Targets::Single((0..5).map(|_| rng.random_range(0..classes)).collect()),
                BatchOffsets::Single(
                    (0..5)
                        .map(|_| (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                ),
            ),
            _ => (
                Targets::Multi((0..5 * classes).map(|_| rng.random_bool(0.4)).collect()),
                BatchOffsets::Binary(BinaryShift {
                    positive: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    negative: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    temperature: rng.random_range(0.5..3.0),
                }),
            ),
        };
        let (_, grads) = batch_gradient(&model, &inputs, &targets, &offsets).expect("gradient");
        let analytic = flat_gradient(&grads);
        let base = model.flat_params();
        for (j, &a) in analytic.iter().enumerate() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[j] = base[j] + h;
            probe.set_flat_params(&p).unwrap();
            let up = batch_loss(&probe, &inputs, &targets, &offsets).unwrap();
            p[j] = base[j] - h;
            probe.set_flat_params(&p).unwrap();
            let down = batch_loss(&probe, &inputs, &targets, &offsets).unwrap();
            let fd = (up - down) / (2.0 * h);
            // relative to the larger magnitude, floored for gradients that vanish
            let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst_param = worst_param.max(rel);
        }
    }
    outcome(
        worst_logit <= LOGIT_FD_TOL && worst_param <= PARAM_FD_REL_TOL,
        format!(
            "{FD_INSTANCES} instances each: worst logit error {worst_logit:.1e} (tol {LOGIT_FD_TOL:.0e}), \
             worst parameter relative error {worst_param:.1e} (tol {PARAM_FD_REL_TOL:.0e})"
        ),
    )
}

fn class_mean_ce(rows: &[Vec<f64>], class: usize, offset: &[f64]) -> f64 {
    rows.iter()
        .map(|r| {
            let shifted: Vec<f64> = r.iter().zip(offset).map(|(u, d)| u + d).collect();
            cross_entropy_index(&shifted, class)
        })
        .sum::<f64>()
        / rows.len() as f64
}

fn criterion_5() -> Outcome {
    let mut rng = RngStream::new(5, 0).rng();
    let mut failures = 0;
    let mut asymmetric = 0;
    let mut skipped = 0;
    for _ in 0..PGD_BATCHES {
        let c = rng.random_range(2..10);
        let n = rng.random_range(1..20);
        let class = rng.random_range(0..c);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let alpha = rng.random_range(1e-4..=PGD_MAX_ALPHA);
        // a bound equal to the step size gives exactly one step
        let up = pgd_perturb(&refs, class, alpha, alpha, Direction::Maximize).unwrap();
        let down = pgd_perturb(&refs, class, alpha, alpha, Direction::Minimize).unwrap();
        if up.iter().zip(&down).any(|(a, b)| *a != -*b) {
            asymmetric += 1;
        }
        let grad_norm = up.iter().map(|v| v * v).sum::<f64>().sqrt() / alpha;
        if grad_norm <= PGD_GRAD_FLOOR {
            skipped += 1;
            continue;
        }
        let base = class_mean_ce(&rows, class, &vec![0.0; c]);
        if class_mean_ce(&rows, class, &up) <= base || class_mean_ce(&rows, class, &down) >= base {
            failures += 1;
        }
    }
    outcome(
        failures == 0 && asymmetric == 0,
        format!(
            "{PGD_BATCHES} batches: {asymmetric} non-opposite offset pairs, {failures} loss-direction failures, \
             {skipped} below the gradient floor"
        ),
    )
}

fn criterion_6() -> Outcome {
    // class positions 1..3; τ = 2 puts class 1 before the threshold
    let u = [[1.2, -0.4, 0.3], [-0.7, 2.1, -1.5], [0.05, -0.9, 1.6]];
    let y = [[true, false, true], [false, true, false], [true, true, false]];
    let eps = [0.3, 0.5, 0.2];
    let tau = 2.0;
    let batch = LogitBatch::new(
        3,
        u.iter().flatten().copied().collect(),
        Targets::Multi(y.iter().flatten().copied().collect()),
    )
    .unwrap();
    let bounds = BoundVector::new(eps.to_vec(), 0.01).unwrap();
    let loss = lpl_loss_multilabel(&batch, tau, &bounds).unwrap();

    let mut hand = 0.0;
    for i in 0..3 {
        for c in 0..3 {
            let s = if (c + 1) as f64 - tau >= 0.0 { 1.0 } else { -1.0 };
            let d = s * eps[c];
            hand += if y[i][c] {
                (1.0 + (-u[i][c] + d).exp()).ln()
            } else {
                (1.0 + (u[i][c] - d).exp()).ln()
            };
        }
    }
    hand /= 9.0;
    // 40-digit evaluation of the same sum
    let frozen = 0.647_320_312_302_071_9;

    let deltas = MultilabelPerturbation::new(tau, &eps).deltas().to_vec();
    let magnitudes_exact = deltas.iter().zip(&eps).all(|(d, e)| d.abs() == *e)
        && (0..3).all(|c| multilabel_delta(c, tau, eps[c]).abs() == eps[c]);
    let pass = magnitudes_exact && (loss - hand).abs() <= FIXTURE_TOL && (loss - frozen).abs() <= FIXTURE_TOL;
    outcome(
        pass,
        format!(
            "|δ_c| = ε_c exactly: {magnitudes_exact}; loss {loss:.15} vs hand {hand:.15} vs frozen {frozen} \
             (tol {FIXTURE_TOL:.0e})"
        ),
    )
}

fn binary_data(seed: u64) -> lpl::data::Dataset {
    let p = TheoryParams {
        dim: 2,
        eta: 0.5,
        sigma: 1.0,
        gamma: 4.0,
        k: 1.0,
        epsilon: 0.0,
        rho_plus: 1.0,
        rho_minus: 1.0,
    };
    lpl::data::gen_gaussian_binary(&p, 40, RngStream::new(seed, 1)).unwrap()
}

fn lpl_settings(mode: SplitMode, tau: f64, eps: f64, delta: f64) -> LplSettings {
    LplSettings {
        spec: PerturbationSpec::new(mode, tau, eps, delta, 0.05).unwrap(),
        form: BoundForm::AbsoluteDifference,
        tau_rule: TauRule::Fixed,
    }
}

fn criterion_7() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    // zero bounds: the whole trajectory equals plain cross-entropy
    let data = binary_data(3);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 16,
        learning_rate: 0.2,
        momentum: 0.5,
        weight_decay: 1e-3,
        seed: 11,
        architecture: Architecture::Mlp { hidden: 5 },
        method: Method::None,
    };
    let plain = train(&cfg, &data, None).unwrap();
    let mut same = true;
    for mode in [SplitMode::Index, SplitMode::Performance] {
        let zero = train(
            &cfg.with_method(Method::Lpl(lpl_settings(mode, 1.5, 0.0, 0.0))),
            &data,
            None,
        )
        .unwrap();
        same &= zero.trajectory == plain.trajectory;
    }
    pass &= same;
    parts.push(format!("zero-bound trajectory identical: {same}"));

    // λ = 0: logit adjustment vanishes from the combination
    let mut rng = RngStream::new(17, 0).rng();
    let mut worst_la: f64 = 0.0;
    for _ in 0..200 {
        let c = rng.random_range(2..6);
        let n = rng.random_range(1..12);
        let logits: Vec<f64> = (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let batch = LogitBatch::new(c, logits, Targets::Single(labels)).unwrap();
        let counts: Vec<usize> = (0..c).map(|i| 50 - 7 * i).collect();
        let profile = ClassProfile::single_label(counts).unwrap();
        let split = split_by_index(c, rng.random_range(0.0..c as f64 + 1.0));
        let bounds = BoundVector::uniform(c, rng.random_range(0.0..1.0), 0.03).unwrap();
        let a = combined_la_lpl_loss(&batch, &profile, 0.0, &split, &bounds)
            .unwrap()
            .loss;
        let b = lpl_loss_single(&batch, &split, &bounds).unwrap().loss;
        worst_la = worst_la.max((a - b).abs());
    }
    pass &= worst_la <= DEGENERATE_TOL;
    parts.push(format!("λ=0 combination gap {worst_la:.1e}"));

    // ψ = 0, λ = 1: the negative-tolerant loss is the plain binary loss
    let mut worst_ntr: f64 = 0.0;
    for _ in 0..200 {
        let c = rng.random_range(2..6);
        let n = rng.random_range(2..12);
        let logits: Vec<f64> = (0..n * c).map(|_| rng.random_range(-6.0..6.0)).collect();
        let mut hot: Vec<bool> = (0..n * c).map(|_| rng.random_bool(0.4)).collect();
        // every class needs a positive and a negative for the shift to exist
        for k in 0..c {
            hot[k] = true;
            hot[c + k] = false;
        }
        let targets = Targets::Multi(hot);
        let profile = ClassProfile::from_targets(c, &targets).unwrap();
        assert_eq!(profile.kind(), TaskKind::MultiLabel);
        let batch = LogitBatch::new(c, logits, targets).unwrap();
        let a = ntr_loss(&batch, &profile, 1.0, 0.0).unwrap();
        let b = mean_multilabel_loss(&batch, &PlainBinary).unwrap();
        worst_ntr = worst_ntr.max((a - b).abs());
    }
    pass &= worst_ntr <= DEGENERATE_TOL;
    parts.push(format!("ψ=0,λ=1 NTR gap {worst_ntr:.1e}"));
    outcome(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let f: TrainFile = load(&preset("binary_gamma10_lpl.toml")).expect("preset parses");
    let perturbed = f.train.resolve(f.seed, f.method.resolve().unwrap()).unwrap();
    let baseline = perturbed.with_method(Method::None);
    assert!(matches!(
        &perturbed.method,
        Method::Lpl(s) if s.spec.mode == SplitMode::Index
    ));
    let trials: Vec<Trial> = (1..=CONJECTURE_SEEDS as u64)
        .map(|seed| {
            let (train, test) = f.data.build(seed).unwrap();
            Trial {
                seed,
                train,
                test: test.unwrap(),
            }
        })
        .collect();
    assert_eq!(
        trials[0].train.profile().counts()[0],
        10 * trials[0].train.profile().counts()[1]
    );
    let report = conjecture_report(&baseline, &perturbed, &trials).unwrap();
    let tail = 1;
    let (ce, lpl) = report.mean_errors(tail);
    let agree = report.agreements(tail);
    let elapsed = start.elapsed();
    outcome(
        lpl < ce && agree >= CONJECTURE_MIN_AGREE && elapsed <= CONJECTURE_BUDGET,
        format!(
            "tail test error CE {ce:.4} vs LPL {lpl:.4}; sign pattern in {agree}/{CONJECTURE_SEEDS} seeds \
             (need {CONJECTURE_MIN_AGREE}); {:.1}s of {}s",
            elapsed.as_secs_f64(),
            CONJECTURE_BUDGET.as_secs()
        ),
    )
}

fn run_cli(args: &[&str], seed_env: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lpl"));
    cmd.args(args).env_remove("LPL_SEED");
    if let Some(s) = seed_env {
        cmd.env("LPL_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = |n: &str| preset(n).to_string_lossy().into_owned();
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (label, seed_env) in [("config seed", None), ("LPL_SEED=42", Some("42"))] {
        let mut runs = Vec::new();
        for rep in 0..2 {
            let root = tmp.path().join(format!("{}-{rep}", seed_env.unwrap_or("cfg")));
            let p = |s: &str| root.join(s).to_string_lossy().into_owned();
            let sweep = run_cli(
                &[
                    "theory-sweep",
                    "--config",
                    &cfg("sweep_class_imbalance_rho_plus.toml"),
                    "--out",
                    &p("sweep"),
                ],
                seed_env,
            );
            let sweep_stdout = run_cli(
                &[
                    "theory-sweep",
                    "--config",
                    &cfg("sweep_first_type_rho_plus.toml"),
                    "--with-mc",
                ],
                seed_env,
            );
            let tr = run_cli(
                &[
                    "train",
                    "--config",
                    &cfg("binary_gamma10_lpl.toml"),
                    "--out",
                    &p("train"),
                ],
                seed_env,
            );
            let ml = run_cli(
                &["train", "--config", &cfg("multilabel_lpl.toml"), "--out", &p("ml")],
                seed_env,
            );
            let dg = run_cli(
                &[
                    "datagen",
                    "--config",
                    &cfg("datagen_longtail.toml"),
                    "--out",
                    &p("data/train.csv"),
                ],
                seed_env,
            );
            let analyze_cfg = root.join("analyze.toml");
            std::fs::write(
                &analyze_cfg,
                "[data]\ngenerator = \"csv\"\npath = \"data/train.csv\"\n\n\
                     [source]\nmodel = \"lt/model.txt\"\n\n\
                     [analyze]\nmethods = [\"none\", \"la\", \"ldam\", \"lpl\"]\nldam_margin = 0.5\n\n\
                     [analyze.lpl]\nname = \"lpl\"\nmode = \"index\"\ntau = 1.5\nepsilon = 1.0\nalpha = 0.25\n",
            )
            .unwrap();
            // the analysed model must match the data shape: train a 10-class one first
            let lt_train = root.join("lt.toml");
            std::fs::write(
                &lt_train,
                "seed = 7\n[data]\ngenerator = \"csv\"\npath = \"data/train.csv\"\n\
                 [train]\nepochs = 5\nbatch_size = 32\nlearning_rate = 0.1\n[method]\nname = \"none\"\n",
            )
            .unwrap();
            let lt = run_cli(
                &["train", "--config", &lt_train.to_string_lossy(), "--out", &p("lt")],
                seed_env,
            );
            let an = run_cli(
                &["analyze", "--config", &analyze_cfg.to_string_lossy(), "--out", &p("an")],
                seed_env,
            );
            for (name, o) in [
                ("sweep", &sweep),
                ("sweep-stdout", &sweep_stdout),
                ("train", &tr),
                ("multilabel", &ml),
                ("datagen", &dg),
                ("train-csv", &lt),
                ("analyze", &an),
            ] {
                if !o.status.success() {
                    return outcome(
                        false,
                        format!("{name} failed ({label}): {}", String::from_utf8_lossy(&o.stderr)),
                    );
                }
            }
            let mut files = csv_files(&root);
            files.push((PathBuf::from("<theory-sweep stdout>"), sweep_stdout.stdout));
            runs.push(files);
        }
        let (a, b) = (&runs[0], &runs[1]);
        if a.len() != b.len() {
            mismatched.push(format!("{label}: file sets differ"));
        }
        for ((pa, ba), (pb, bb)) in a.iter().zip(b) {
            compared += 1;
            if pa != pb || ba != bb {
                mismatched.push(format!("{label}: {}", pa.display()));
            }
        }
    }
    outcome(
        mismatched.is_empty() && compared > 0,
        if mismatched.is_empty() {
            format!("{compared} CSV outputs byte-identical across repeated runs of every command")
        } else {
            format!("differences in {}", mismatched.join(", "))
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("theory matches Monte-Carlo", criterion_1),
        ("optimal bias recovered by grid search", criterion_2),
        ("preset sweeps monotone", criterion_3),
        ("gradients match finite differences", criterion_4),
        ("single-step perturbation mechanics", criterion_5),
        ("multi-label closed-form offsets", criterion_6),
        ("degenerate settings reduce exactly", criterion_7),
        ("tail class helped at desk scale", criterion_8),
        ("CLI outputs reproducible", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let _ = writeln!(
            std::io::stdout().lock(),
            "criterion {}: {} [{name}] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
