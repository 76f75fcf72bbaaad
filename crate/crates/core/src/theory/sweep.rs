//! One-parameter sweeps of the closed-form errors with optional Monte-Carlo columns.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use super::mc::mc_error_estimate;
use super::{errors, is_monotone, optimal_bias, ErrorPair, Scenario, TheoryParams, Trend};
use crate::error::{Error, Result};
use crate::math::RngStream;

pub const CSV_HEADER: &str =
    "swept_param,value,err_plus_cf,err_minus_cf,total_cf,err_plus_mc,err_minus_mc,mc_se,feasible";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweptParam {
    RhoPlus,
    RhoMinus,
}

impl SweptParam {
    pub fn name(self) -> &'static str {
        match self {
            SweptParam::RhoPlus => "rho_plus",
            SweptParam::RhoMinus => "rho_minus",
        }
    }

    pub fn apply(self, p: TheoryParams, value: f64) -> TheoryParams {
        match self {
            SweptParam::RhoPlus => p.with_rho_plus(value),
            SweptParam::RhoMinus => p.with_rho_minus(value),
        }
    }
}

impl FromStr for SweptParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho_plus" => Ok(SweptParam::RhoPlus),
            "rho_minus" => Ok(SweptParam::RhoMinus),
            other => Err(Error::invalid(format!(
                "unknown swept parameter {other:?}; expected rho_plus or rho_minus"
            ))),
        }
    }
}

/// Monte-Carlo columns of a sweep row (unshifted errors at the optimal bias).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McColumns {
    pub err_plus: f64,
    pub err_minus: f64,
    /// Larger of the two class standard errors.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub closed: Option<ErrorPair>,
    pub mc: Option<McColumns>,
    /// Why the row is infeasible, if it is.
    pub infeasible: Option<String>,
}

impl SweepRow {
    pub fn feasible(&self) -> bool {
        self.infeasible.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scenario: Scenario,
    pub swept: SweptParam,
    pub rows: Vec<SweepRow>,
}

/// Monte-Carlo settings for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub samples: usize,
    pub rng: RngStream,
}

pub fn sweep(
    scenario: Scenario,
    p: &TheoryParams,
    swept: SweptParam,
    grid: &[f64],
    mc: Option<McOptions>,
) -> Result<SweepTable> {
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let q = swept.apply(*p, value);
            let closed = match errors(scenario, &q) {
                Ok(e) => e,
                Err(e @ (Error::Infeasible(_) | Error::Singular(_) | Error::InvalidArgument(_))) => {
                    return Ok(SweepRow {
                        value,
                        closed: None,
                        mc: None,
                        infeasible: Some(e.to_string()),
                    })
                }
                Err(e) => return Err(e),
            };
            let mc = match mc {
                Some(opts) => {
                    let b = optimal_bias(scenario, &q)?;
                    let est = mc_error_estimate(scenario, &q, b, opts.samples, opts.rng.substream(i as u64))?;
                    Some(McColumns {
                        err_plus: est.natural.err_plus,
                        err_minus: est.natural.err_minus,
                        se: est.se_plus.max(est.se_minus),
                    })
                }
                None => None,
            };
            Ok(SweepRow {
                value,
                closed: Some(closed),
                mc,
                infeasible: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { scenario, swept, rows })
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl SweepTable {
    pub fn feasible_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.feasible())
    }

    pub fn err_plus(&self) -> Vec<f64> {
        self.feasible_rows()
            .filter_map(|r| r.closed)
            .map(|e| e.err_plus)
            .collect()
    }

    pub fn err_minus(&self) -> Vec<f64> {
        self.feasible_rows()
            .filter_map(|r| r.closed)
            .map(|e| e.err_minus)
            .collect()
    }

    /// Trends of the closed-form error columns over the feasible rows.
    pub fn trends(&self, slack: f64) -> (Option<Trend>, Option<Trend>) {
        let trend = |v: &[f64]| {
            [Trend::Decreasing, Trend::Increasing]
                .into_iter()
                .find(|&t| is_monotone(v, t, slack))
        };
        (trend(&self.err_plus()), trend(&self.err_minus()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.swept.name(),
                r.value,
                cell(r.closed.map(|e| e.err_plus)),
                cell(r.closed.map(|e| e.err_minus)),
                cell(r.closed.map(|e| e.total)),
                cell(r.mc.map(|m| m.err_plus)),
                cell(r.mc.map(|m| m.err_minus)),
                cell(r.mc.map(|m| m.se)),
                r.feasible()
            );
        }
        out
    }

    /// Per-row total errors: prior-weighted and unweighted mean.
    pub fn totals_csv(&self) -> String {
        let mut out = String::from("swept_param,value,total_weighted,total_mean\n");
        for r in self.feasible_rows() {
            if let Some(e) = r.closed {
                let _ = writeln!(out, "{},{},{},{}", self.swept.name(), r.value, e.total, e.mean);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_first_type() -> TheoryParams {
        TheoryParams {
            dim: 2,
            eta: 1.0,
            sigma: 1.0,
            gamma: 2.0,
            k: 1.0,
            epsilon: 0.2,
            rho_plus: 1.0,
            rho_minus: 1.0,
        }
    }

    #[test]
    fn first_type_sweep_has_expected_directions() {
        let grid = linear_grid(0.0, 4.9, 50);
        let t = sweep(
            Scenario::FirstTypeBoth,
            &fig_first_type(),
            SweptParam::RhoPlus,
            &grid,
            None,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 50);
        assert!(t.rows.iter().all(SweepRow::feasible));
        assert_eq!(t.trends(1e-12), (Some(Trend::Decreasing), Some(Trend::Increasing)));
    }

    #[test]
    fn empty_and_single_point_grids() {
        let p = fig_first_type();
        let t = sweep(Scenario::FirstTypeBoth, &p, SweptParam::RhoPlus, &[], None).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), format!("{CSV_HEADER}\n"));

        let t = sweep(Scenario::FirstTypeBoth, &p, SweptParam::RhoPlus, &[1.5], None).unwrap();
        let direct = errors(Scenario::FirstTypeBoth, &p.with_rho_plus(1.5)).unwrap();
        assert_eq!(t.rows[0].closed, Some(direct));
    }

    #[test]
    fn infeasible_points_are_marked_and_skipped() {
        let grid = [1.0, 5.0, 6.0, 2.0];
        let t = sweep(
            Scenario::FirstTypeBoth,
            &fig_first_type(),
            SweptParam::RhoPlus,
            &grid,
            None,
        )
        .unwrap();
        let flags: Vec<bool> = t.rows.iter().map(SweepRow::feasible).collect();
        assert_eq!(flags, vec![true, false, false, true]);
        let csv = t.to_csv();
        let line = csv.lines().nth(2).unwrap();
        assert_eq!(line, "rho_plus,5,,,,,,,false");
    }

    #[test]
    fn mc_columns_agree_with_closed_form() {
        let grid = linear_grid(0.0, 4.0, 3);
        let opts = McOptions {
            samples: 200_000,
            rng: RngStream::new(3, 0),
        };
        let t = sweep(
            Scenario::FirstTypeBoth,
            &fig_first_type(),
            SweptParam::RhoPlus,
            &grid,
            Some(opts),
        )
        .unwrap();
        for r in &t.rows {
            let (c, m) = (r.closed.unwrap(), r.mc.unwrap());
            assert!((c.err_plus - m.err_plus).abs() < 4.0 * m.se);
            assert!((c.err_minus - m.err_minus).abs() < 4.0 * m.se);
        }
        let again = sweep(
            Scenario::FirstTypeBoth,
            &fig_first_type(),
            SweptParam::RhoPlus,
            &grid,
            Some(opts),
        )
        .unwrap();
        assert_eq!(t.to_csv(), again.to_csv());
    }

    #[test]
    fn totals_report_both_normalisations() {
        let t = sweep(
            Scenario::FirstTypeBoth,
            &fig_first_type(),
            SweptParam::RhoPlus,
            &[0.0],
            None,
        )
        .unwrap();
        let e = t.rows[0].closed.unwrap();
        assert!((e.total - (e.err_plus + 2.0 * e.err_minus) / 3.0).abs() < 1e-15);
        assert!((e.mean - (e.err_plus + e.err_minus) / 2.0).abs() < 1e-15);
        assert_eq!(t.totals_csv().lines().count(), 2);
    }

    #[test]
    fn grid_helper() {
        assert!(linear_grid(0.0, 1.0, 0).is_empty());
        assert_eq!(linear_grid(2.0, 3.0, 1), vec![2.0]);
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
