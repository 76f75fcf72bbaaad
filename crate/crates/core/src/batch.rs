//! Logit batches and per-class corpus statistics.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
}

/// Labels for a batch: class indices (single-label) or multi-hot rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Single(Vec<usize>),
    /// Row-major `n × classes` multi-hot matrix.
    Multi(Vec<bool>),
}

impl Targets {
    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Single(_) => TaskKind::SingleLabel,
            Targets::Multi(_) => TaskKind::MultiLabel,
        }
    }
}

/// A batch of logit vectors with their targets, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    classes: usize,
    logits: Vec<f64>,
    targets: Targets,
}

impl LogitBatch {
    pub fn new(classes: usize, logits: Vec<f64>, targets: Targets) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("batch needs at least one class"));
        }
        if !logits.len().is_multiple_of(classes) {
            return Err(Error::invalid(format!(
                "{} logits do not divide into rows of {classes}",
                logits.len()
            )));
        }
        if let Some(u) = logits.iter().find(|u| !u.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {u}")));
        }
        let n = logits.len() / classes;
        match &targets {
            Targets::Single(labels) => {
                if labels.len() != n {
                    return Err(Error::invalid(format!("{} labels for {n} logit rows", labels.len())));
                }
                if let Some(&k) = labels.iter().find(|&&k| k >= classes) {
                    return Err(Error::invalid(format!("label {k} out of range")));
                }
            }
            Targets::Multi(hot) => {
                if hot.len() != logits.len() {
                    return Err(Error::invalid(format!(
                        "multi-hot matrix has {} entries, logits have {}",
                        hot.len(),
                        logits.len()
                    )));
                }
            }
        }
        Ok(Self {
            classes,
            logits,
            targets,
        })
    }

    /// Single-label batch from one-hot rows, as used by the loss helpers.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::invalid("ragged logit rows"));
        }
        Self::new(classes, rows.concat(), Targets::Single(labels.to_vec()))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.logits.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn kind(&self) -> TaskKind {
        self.targets.kind()
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.logits.chunks(self.classes)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Class labels; errors for multi-label batches.
    pub fn labels(&self) -> Result<&[usize]> {
        match &self.targets {
            Targets::Single(labels) => Ok(labels),
            Targets::Multi(_) => Err(Error::invalid("expected a single-label batch")),
        }
    }

    /// Multi-hot matrix; errors for single-label batches.
    pub fn multi_hot(&self) -> Result<&[bool]> {
        match &self.targets {
            Targets::Multi(hot) => Ok(hot),
            Targets::Single(_) => Err(Error::invalid("expected a multi-label batch")),
        }
    }

    /// Sample indices grouped by their (single) class.
    pub fn members_by_class(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.labels()?;
        let mut members = vec![Vec::new(); self.classes];
        for (i, &k) in labels.iter().enumerate() {
            members[k].push(i);
        }
        Ok(members)
    }
}

/// Per-class sample counts of a corpus.
///
/// Single-label priors sum to one; multi-label counts are positive-sample
/// counts per class, so the priors may sum to more than one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassProfile {
    counts: Vec<usize>,
    total: usize,
    kind: TaskKind,
}

impl ClassProfile {
    pub fn new(counts: Vec<usize>, total: usize, kind: TaskKind) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("profile needs at least one class"));
        }
        if total == 0 {
            return Err(Error::invalid("profile total must be positive"));
        }
        let sum: usize = counts.iter().sum();
        if kind == TaskKind::SingleLabel && sum != total {
            return Err(Error::invalid(format!(
                "single-label counts sum to {sum}, total is {total}"
            )));
        }
        if counts.iter().any(|&n| n > total) {
            return Err(Error::invalid("a class count exceeds the total"));
        }
        Ok(Self { counts, total, kind })
    }

    pub fn single_label(counts: Vec<usize>) -> Result<Self> {
        let total = counts.iter().sum();
        Self::new(counts, total, TaskKind::SingleLabel)
    }

    pub fn from_targets(classes: usize, targets: &Targets) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        match targets {
            Targets::Single(labels) => {
                for &k in labels {
                    if k >= classes {
                        return Err(Error::invalid(format!("label {k} out of range")));
                    }
                    counts[k] += 1;
                }
                Self::new(counts, labels.len(), TaskKind::SingleLabel)
            }
            Targets::Multi(hot) => {
                if classes == 0 || hot.len() % classes != 0 {
                    return Err(Error::invalid("multi-hot matrix shape mismatch"));
                }
                for row in hot.chunks(classes) {
                    for (c, &y) in row.iter().enumerate() {
                        counts[c] += usize::from(y);
                    }
                }
                Self::new(counts, hot.len() / classes, TaskKind::MultiLabel)
            }
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn priors(&self) -> Vec<f64> {
        self.counts.iter().map(|&n| n as f64 / self.total as f64).collect()
    }

    pub fn is_descending(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] >= w[1])
    }

    /// Head/medium/tail bucket (0, 1, 2) of each class by count rank terciles.
    pub fn terciles(&self) -> Vec<usize> {
        let c = self.classes();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        let mut bucket = vec![0; c];
        for (rank, &class) in order.iter().enumerate() {
            bucket[class] = 3 * rank / c;
        }
        bucket
    }
}
