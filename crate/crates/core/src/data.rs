//! Seeded synthetic datasets and CSV round-tripping.
//!
//! CSV files carry a header of `f1..fd` feature columns followed by either a
//! single `label` column (class index) or `y1..yC` multi-hot columns. A
//! dataset saved to `data.csv` also gets a `data.csv.meta` sidecar of
//! `key=value` lines recording the generator, its parameters and the seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::batch::{ClassProfile, Targets};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::math::RngStream;
use crate::theory::TheoryParams;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub generator: String,
    pub params: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl Provenance {
    fn new(generator: &str, seed: u64, params: &[(&str, String)]) -> Self {
        Self {
            generator: generator.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            seed: Some(seed),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn to_sidecar(&self, classes: usize) -> String {
        let mut out = format!("generator={}\n", self.generator);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed={seed}");
        }
        let _ = writeln!(out, "num_classes={classes}");
        for (k, v) in &self.params {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn from_sidecar(text: &str, path: &Path) -> Result<(Self, Option<usize>)> {
        let mut prov = Provenance::default();
        let mut classes = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "generator" => prov.generator = v.to_string(),
                "seed" => prov.seed = Some(v.parse().map_err(|_| parse_err(format!("bad seed {v:?}")))?),
                "num_classes" => classes = Some(v.parse().map_err(|_| parse_err(format!("bad class count {v:?}")))?),
                _ => prov.params.push((k.to_string(), v.to_string())),
            }
        }
        Ok((prov, classes))
    }
}

/// Feature rows with their targets and class tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    targets: Targets,
    profile: ClassProfile,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        dim: usize,
        classes: usize,
        features: Vec<f64>,
        targets: Targets,
        provenance: Provenance,
    ) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid("dataset needs a positive dimension and class count"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::invalid("feature matrix does not divide into rows"));
        }
        let n = features.len() / dim;
        let rows = match &targets {
            Targets::Single(l) => l.len(),
            Targets::Multi(h) => h.len() / classes,
        };
        if rows != n || matches!(&targets, Targets::Multi(h) if h.len() % classes != 0) {
            return Err(Error::invalid(format!("{n} feature rows but {rows} target rows")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        let profile = ClassProfile::from_targets(classes, &targets)?;
        Ok(Self {
            dim,
            classes,
            features,
            targets,
            profile,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn profile(&self) -> &ClassProfile {
        &self.profile
    }

    /// Rows `indices`, in that order, with recomputed tallies.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Single(l) => Targets::Single(indices.iter().map(|&i| l[i]).collect()),
            Targets::Multi(h) => Targets::Multi(
                indices
                    .iter()
                    .flat_map(|&i| h[i * self.classes..(i + 1) * self.classes].iter().copied())
                    .collect(),
            ),
        };
        Self::new(self.dim, self.classes, features, targets, self.provenance.clone())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("f{j}")).collect();
        match &self.targets {
            Targets::Single(_) => header.push("label".into()),
            Targets::Multi(_) => header.extend((1..=self.classes).map(|c| format!("y{c}"))),
        }
        let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            match &self.targets {
                Targets::Single(l) => rec.push(l[i].to_string()),
                Targets::Multi(h) => rec.extend(
                    h[i * self.classes..(i + 1) * self.classes]
                        .iter()
                        .map(|&y| u8::from(y).to_string()),
                ),
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv encoding failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    /// Writes the CSV and its `.meta` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())?;
        write_atomic(&sidecar_path(path), self.provenance.to_sidecar(self.classes).as_bytes())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Reads a dataset CSV and, when present, its `.meta` sidecar.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let meta = sidecar_path(path);
    let (provenance, meta_classes) = if meta.exists() {
        Provenance::from_sidecar(&read_to_string(&meta)?, &meta)?
    } else {
        (
            Provenance {
                generator: "csv".into(),
                params: vec![("source".into(), path.display().to_string())],
                seed: None,
            },
            None,
        )
    };
    parse_csv(&text, path, meta_classes, provenance)
}

fn parse_csv(text: &str, path: &Path, meta_classes: Option<usize>, provenance: Provenance) -> Result<Dataset> {
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| err(1, format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let dim = names.iter().take_while(|n| n.starts_with('f')).count();
    for (j, name) in names[..dim].iter().enumerate() {
        if *name != format!("f{}", j + 1) {
            return Err(err(1, format!("expected column f{}, found {name:?}", j + 1)));
        }
    }
    if dim == 0 {
        return Err(err(1, "no feature columns".into()));
    }
    let rest = &names[dim..];
    let multi = match rest {
        ["label"] => None,
        ys if !ys.is_empty() && ys.iter().enumerate().all(|(c, n)| *n == format!("y{}", c + 1)) => Some(ys.len()),
        _ => {
            return Err(err(
                1,
                format!("expected a label column or y1..yC after the features, found {rest:?}"),
            ))
        }
    };
    let width = names.len();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut hot = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(err(line, format!("expected {width} columns, found {}", rec.len())));
        }
        for (j, cell) in rec.iter().take(dim).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(line, format!("column f{}: {cell:?} is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(err(line, format!("column f{}: non-finite value", j + 1)));
            }
            features.push(v);
        }
        match multi {
            None => {
                let cell = rec[dim].trim();
                let k: usize = cell
                    .parse()
                    .map_err(|_| err(line, format!("label {cell:?} is not a class index")))?;
                labels.push(k);
            }
            Some(_) => {
                for (c, cell) in rec.iter().skip(dim).enumerate() {
                    hot.push(match cell.trim() {
                        "1" => true,
                        "0" => false,
                        other => return Err(err(line, format!("column y{}: {other:?} is not 0 or 1", c + 1))),
                    });
                }
            }
        }
    }
    let (classes, targets) = match multi {
        None => {
            let seen = labels.iter().max().map_or(1, |&m| m + 1);
            (seen.max(meta_classes.unwrap_or(0)), Targets::Single(labels))
        }
        Some(c) => (c, Targets::Multi(hot)),
    };
    Dataset::new(dim, classes, features, targets, provenance)
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Two-class set of the theory model: class 0 is `y = −1` (`⌈Γ·n₊⌉` points from
/// `N(−θ, (Kσ)²I)`), class 1 is `y = +1` (`n₊` points from `N(θ, σ²I)`).
pub fn gen_gaussian_binary(p: &TheoryParams, n_plus: usize, rng: RngStream) -> Result<Dataset> {
    p.validate()?;
    if n_plus == 0 {
        return Err(Error::invalid("need at least one positive sample"));
    }
    // slack keeps e.g. Γ = 1.1, n₊ = 10 at 11 rather than 12
    let n_minus = (p.gamma * n_plus as f64 - 1e-9).ceil() as usize;
    let d = p.dim;
    let mut r = rng.rng();
    let mut features = Vec::with_capacity((n_minus + n_plus) * d);
    let mut labels = Vec::with_capacity(n_minus + n_plus);
    for (class, count, mean, sd) in [(0, n_minus, -p.eta, p.k * p.sigma), (1, n_plus, p.eta, p.sigma)] {
        for _ in 0..count {
            features.extend((0..d).map(|_| mean + sd * normal(&mut r)));
            labels.push(class);
        }
    }
    let prov = Provenance::new(
        "gaussian-binary",
        rng.seed,
        &[
            ("dim", d.to_string()),
            ("eta", p.eta.to_string()),
            ("sigma", p.sigma.to_string()),
            ("gamma", p.gamma.to_string()),
            ("k", p.k.to_string()),
            ("n_plus", n_plus.to_string()),
            ("stream", rng.stream.to_string()),
        ],
    );
    let ds = Dataset::new(d, 2, features, Targets::Single(labels), prov)?;
    ds.subset(&shuffled(ds.len(), &mut r))
}

/// Class sizes `round(n_head · ratio^{−c/(C−1)})` for 0-based `c`.
pub fn longtail_counts(classes: usize, ratio: f64, n_head: usize) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!(
            "imbalance ratio must be at least 1, got {ratio}"
        )));
    }
    let counts: Vec<usize> = (0..classes)
        .map(|c| (n_head as f64 * ratio.powf(-(c as f64) / (classes - 1) as f64)).round() as usize)
        .collect();
    if counts[classes - 1] < 1 {
        return Err(Error::invalid("the smallest class would be empty"));
    }
    Ok(counts)
}

/// Class means with pairwise distance at least `separation`: simplex corners
/// when `dim ≥ C`, otherwise a circle in the first two coordinates (or a line
/// when `dim = 1`).
pub fn class_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if dim >= classes {
                m[c] = separation / std::f64::consts::SQRT_2;
            } else if dim == 1 {
                m[0] = separation * c as f64;
            } else {
                let r = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                let a = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                m[0] = r * a.cos();
                m[1] = r * a.sin();
            }
            m
        })
        .collect()
}

/// Long-tailed single-label set; class `c` is `N(μ_c, I)`.
pub fn gen_longtail_multiclass(
    classes: usize,
    ratio: f64,
    n_head: usize,
    dim: usize,
    separation: f64,
    rng: RngStream,
) -> Result<Dataset> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let counts = longtail_counts(classes, ratio, n_head)?;
    let means = class_means(classes, dim, separation);
    let mut r = rng.rng();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (c, (&n, mu)) in counts.iter().zip(&means).enumerate() {
        for _ in 0..n {
            features.extend(mu.iter().map(|m| m + normal(&mut r)));
            labels.push(c);
        }
    }
    let prov = Provenance::new(
        "longtail-multiclass",
        rng.seed,
        &[
            ("classes", classes.to_string()),
            ("ratio", ratio.to_string()),
            ("n_head", n_head.to_string()),
            ("dim", dim.to_string()),
            ("separation", separation.to_string()),
            ("stream", rng.stream.to_string()),
        ],
    );
    let ds = Dataset::new(dim, classes, features, Targets::Single(labels), prov)?;
    ds.subset(&shuffled(ds.len(), &mut r))
}

/// Parameters of the multi-label generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultilabelParams {
    pub classes: usize,
    pub samples: usize,
    /// Geometric decay of class weights, in `(0, 1]`.
    pub head_frac: f64,
    /// Expected positives per sample divided by the class count.
    pub label_density: f64,
    pub dim: usize,
    /// Scale of the class prototypes relative to the unit noise.
    pub separation: f64,
}

/// Multi-label set: one primary class per sample drawn from geometric weights
/// `w_c ∝ head_frac^c`, each other class added independently with probability
/// `min(1, κ·w_c)`, with `κ` set so that the expected number of positives is
/// `label_density·C`. Features are the sum of the active prototypes plus unit noise.
pub fn gen_multilabel(params: &MultilabelParams, rng: RngStream) -> Result<Dataset> {
    let MultilabelParams {
        classes,
        samples,
        head_frac,
        label_density,
        dim,
        separation,
    } = *params;
    if classes < 2 || dim == 0 || samples == 0 {
        return Err(Error::invalid(
            "need at least two classes, one dimension and one sample",
        ));
    }
    if !(head_frac > 0.0 && head_frac <= 1.0) {
        return Err(Error::invalid(format!("head_frac must be in (0, 1], got {head_frac}")));
    }
    if !(label_density > 0.0 && label_density < 1.0) {
        return Err(Error::invalid(format!(
            "label density must be in (0, 1), got {label_density}"
        )));
    }
    let target_extra = label_density * classes as f64 - 1.0;
    if target_extra < -1e-12 {
        return Err(Error::invalid(format!(
            "label density {label_density} gives fewer than one positive per sample"
        )));
    }
    let raw: Vec<f64> = (0..classes).map(|c| head_frac.powi(c as i32)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let extra = |kappa: f64| -> f64 { w.iter().map(|&wc| (1.0 - wc) * (kappa * wc).min(1.0)).sum() };
    let max_extra = extra(f64::MAX);
    if target_extra.max(0.0) > max_extra - 1e-12 && target_extra > 0.0 {
        return Err(Error::invalid(format!(
            "label density {label_density} is not reachable"
        )));
    }
    let kappa = if target_extra <= 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while extra(hi) < target_extra {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if extra(mid) < target_extra {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut r = rng.rng();
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| separation * normal(&mut r)).collect())
        .collect();
    let mut features = Vec::with_capacity(samples * dim);
    let mut hot = Vec::with_capacity(samples * classes);
    for _ in 0..samples {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut primary = classes - 1;
        for (c, &wc) in w.iter().enumerate() {
            acc += wc;
            if u < acc {
                primary = c;
                break;
            }
        }
        let mut x: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
        for c in 0..classes {
            let on = c == primary || r.random::<f64>() < (kappa * w[c]).min(1.0);
            if on {
                for (xi, pi) in x.iter_mut().zip(&prototypes[c]) {
                    *xi += pi;
                }
            }
            hot.push(on);
        }
        features.extend(x);
    }
    let prov = Provenance::new(
        "multilabel",
        rng.seed,
        &[
            ("classes", classes.to_string()),
            ("samples", samples.to_string()),
            ("head_frac", head_frac.to_string()),
            ("label_density", label_density.to_string()),
            ("dim", dim.to_string()),
            ("separation", separation.to_string()),
            ("stream", rng.stream.to_string()),
        ],
    );
    Dataset::new(dim, classes, features, Targets::Multi(hot), prov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theory(gamma: f64, k: f64) -> TheoryParams {
        TheoryParams {
            dim: 3,
            eta: 1.0,
            sigma: 1.0,
            gamma,
            k,
            epsilon: 0.0,
            rho_plus: 1.0,
            rho_minus: 1.0,
        }
    }

    fn class_mean(ds: &Dataset, class: usize) -> Vec<f64> {
        let Targets::Single(l) = ds.targets() else { panic!() };
        let mut m = vec![0.0; ds.dim()];
        let mut n = 0;
        for (i, &k) in l.iter().enumerate() {
            if k == class {
                for (a, b) in m.iter_mut().zip(ds.row(i)) {
                    *a += b;
                }
                n += 1;
            }
        }
        m.iter().map(|v| v / n as f64).collect()
    }

    #[test]
    fn gaussian_binary_counts_and_means() {
        let ds = gen_gaussian_binary(&theory(1.0, 1.0), 5000, RngStream::new(1, 0)).unwrap();
        assert_eq!(ds.profile().counts(), &[5000, 5000]);
        let tol = 4.0 / (5000f64).sqrt();
        for v in class_mean(&ds, 0) {
            assert!((v + 1.0).abs() < tol);
        }
        for v in class_mean(&ds, 1) {
            assert!((v - 1.0).abs() < tol);
        }

        let ds = gen_gaussian_binary(&theory(10.0, 1.0), 37, RngStream::new(1, 0)).unwrap();
        assert_eq!(ds.profile().counts(), &[370, 37]);
        let ds = gen_gaussian_binary(&theory(1.1, 1.0), 10, RngStream::new(1, 0)).unwrap();
        assert_eq!(ds.profile().counts(), &[11, 10]);
        assert!(gen_gaussian_binary(&theory(1.0, 1.0), 0, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn gaussian_binary_negative_class_variance() {
        let ds = gen_gaussian_binary(&theory(1.0, 2.0), 10_000, RngStream::new(2, 0)).unwrap();
        let mean = class_mean(&ds, 0);
        let Targets::Single(l) = ds.targets() else { panic!() };
        let mut diag = 0.0;
        let mut n = 0.0;
        for (i, &k) in l.iter().enumerate() {
            if k == 0 {
                diag += ds.row(i).iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>();
                n += 1.0;
            }
        }
        let avg = diag / (n - 1.0) / ds.dim() as f64;
        assert!((avg - 4.0).abs() < 0.4, "{avg}");
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_gaussian_binary(&theory(3.0, 1.5), 50, RngStream::new(7, 1)).unwrap();
        let b = gen_gaussian_binary(&theory(3.0, 1.5), 50, RngStream::new(7, 1)).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        let c = gen_gaussian_binary(&theory(3.0, 1.5), 50, RngStream::new(8, 1)).unwrap();
        assert_ne!(a.to_csv().unwrap(), c.to_csv().unwrap());

        let p = MultilabelParams {
            classes: 5,
            samples: 40,
            head_frac: 0.6,
            label_density: 0.3,
            dim: 4,
            separation: 2.0,
        };
        assert_eq!(
            gen_multilabel(&p, RngStream::new(3, 0)).unwrap(),
            gen_multilabel(&p, RngStream::new(3, 0)).unwrap()
        );
    }

    #[test]
    fn longtail_count_examples() {
        assert_eq!(longtail_counts(4, 1.0, 50).unwrap(), vec![50; 4]);
        let c = longtail_counts(10, 100.0, 1000).unwrap();
        assert_eq!(c[9], 10);
        assert!(c.windows(2).all(|w| w[0] > w[1]));
        assert!(longtail_counts(10, 1e6, 100).is_err());
        assert!(longtail_counts(1, 2.0, 100).is_err());

        let ds = gen_longtail_multiclass(10, 100.0, 1000, 4, 3.0, RngStream::new(5, 0)).unwrap();
        assert_eq!(ds.profile().counts(), c.as_slice());
        assert!(ds.profile().is_descending());
    }

    #[test]
    fn class_means_are_separated() {
        for (classes, dim) in [(5, 8), (5, 2), (7, 3), (3, 1)] {
            let m = class_means(classes, dim, 2.5);
            for i in 0..classes {
                for j in 0..i {
                    let dist: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(dist >= 2.5 - 1e-9, "{classes}/{dim}: {dist}");
                }
            }
        }
    }

    #[test]
    fn multilabel_density_and_order() {
        let p = MultilabelParams {
            classes: 6,
            samples: 20_000,
            head_frac: 0.6,
            label_density: 1.0 / 6.0,
            dim: 4,
            separation: 2.0,
        };
        let ds = gen_multilabel(&p, RngStream::new(11, 0)).unwrap();
        let Targets::Multi(h) = ds.targets() else { panic!() };
        let per_row: Vec<usize> = h.chunks(6).map(|r| r.iter().filter(|&&y| y).count()).collect();
        assert!(per_row.iter().all(|&k| k >= 1));
        let mean = per_row.iter().sum::<usize>() as f64 / per_row.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);

        let p = MultilabelParams {
            label_density: 0.3,
            ..p
        };
        let ds = gen_multilabel(&p, RngStream::new(11, 0)).unwrap();
        let Targets::Multi(h) = ds.targets() else { panic!() };
        let mean = h.iter().filter(|&&y| y).count() as f64 / p.samples as f64;
        assert!((mean - 1.8).abs() < 0.05, "{mean}");
        assert!(ds.profile().is_descending());
        assert!(ds.profile().counts()[0] < p.samples);

        assert!(gen_multilabel(
            &MultilabelParams {
                label_density: 0.1,
                ..p
            },
            RngStream::new(1, 0)
        )
        .is_err());
        assert!(gen_multilabel(
            &MultilabelParams {
                label_density: 1.0,
                ..p
            },
            RngStream::new(1, 0)
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let single = gen_longtail_multiclass(3, 4.0, 20, 2, 3.0, RngStream::new(2, 0)).unwrap();
        let path = dir.path().join("single.csv");
        single.save(&path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.features(), single.features());
        assert_eq!(back.targets(), single.targets());
        assert_eq!(back.provenance, single.provenance);

        let p = MultilabelParams {
            classes: 4,
            samples: 15,
            head_frac: 0.5,
            label_density: 0.4,
            dim: 3,
            separation: 1.0,
        };
        let multi = gen_multilabel(&p, RngStream::new(2, 0)).unwrap();
        let path = dir.path().join("multi.csv");
        multi.save(&path).unwrap();
        assert_eq!(load_csv(&path).unwrap(), multi);
    }

    #[test]
    fn hand_written_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "f1,f2,label\n0.5,-1,0\n2,3.25,1\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.row(1), &[2.0, 3.25]);
        assert_eq!(ds.profile().counts(), &[1, 1]);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f1,f2,label\n0.5,-1,0\n2,1\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "f1,f2,label\n0.5,abc,0\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("f2"));
            }
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "f1,y1,y2\n1,0,2\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }
}
