//! Class-level logit perturbation.
//!
//! The crate is organised by concern:
//!
//! - [`math`]: softmax, cross-entropy, logistic losses, normal CDF, seeded streams.
//! - [`batch`]: logit batches and per-class corpus statistics.
//! - [`baselines`]: offsets and losses of five published perturbation schemes
//!   (logit adjustment, ISDA, LDAM, negative-tolerant regularisation, logit
//!   compensation) and the relative loss-variation statistic.
//! - [`lpl`]: learned class-level perturbation: category splits, bounds,
//!   the PGD-like inner optimisation and the single/multi-label losses.
//! - [`theory`]: closed-form class errors of the imbalanced binary-Gaussian
//!   model under bounded logit shifts, a Monte-Carlo oracle and sweeps.
//! - [`data`]: seeded synthetic datasets and CSV I/O.
//! - [`train`]: a small linear/MLP trainer with pluggable perturbation.
//! - [`cli`]: the `lpl` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod batch;
pub mod cli;
pub mod data;
pub mod error;
pub mod lpl;
pub mod math;
pub mod theory;
pub mod train;

mod io;

pub use error::{Error, Result};
