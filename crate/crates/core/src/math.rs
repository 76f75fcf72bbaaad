//! Numerical primitives shared by every other module: softmax, cross-entropy
//! and its logit gradient, the two binary-logistic branches, the standard
//! normal CDF and seeded random streams.
//!
//! Everything here is a pure function of its inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Beyond this magnitude `softplus` switches to its asymptotic branch.
const SOFTPLUS_BRANCH: f64 = 30.0;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log Σ exp(u_c)` computed around the maximum.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&u| (u - max).exp()).sum();
    max + sum.ln()
}

/// Index of the single `1` in a one-hot target.
pub fn one_hot_index(target: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &y) in target.iter().enumerate() {
        if y == 1.0 {
            if hot.is_some() {
                return Err(Error::invalid("target has more than one hot entry"));
            }
            hot = Some(i);
        } else if y != 0.0 {
            return Err(Error::invalid(format!("target entry {i} is {y}, expected 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::invalid("target has no hot entry"))
}

/// `-log softmax(u)_k` where `k` is the hot index of `target`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(logits, target)?;
    let k = one_hot_index(target)?;
    Ok(cross_entropy_index(logits, k))
}

/// Cross-entropy for a class index; callers guarantee `k < logits.len()`.
pub fn cross_entropy_index(logits: &[f64], k: usize) -> f64 {
    let uk = logits[k];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if uk >= max {
        // keep small losses of confident predictions accurate
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != k)
            .map(|(_, &u)| (u - uk).exp())
            .sum();
        rest.ln_1p()
    } else {
        let sum: f64 = logits.iter().map(|&u| (u - max).exp()).sum();
        max - uk + sum.ln()
    }
}

/// `CE(u + δ, k) − CE(u, k)` evaluated as `−δ_k + log1p(Σ p_c·expm1(δ_c))`,
/// which keeps its relative accuracy when the change is tiny.
pub fn cross_entropy_change(logits: &[f64], k: usize, offset: &[f64]) -> f64 {
    let p = softmax_unchecked(logits);
    let inner: f64 = p.iter().zip(offset).map(|(p, d)| p * d.exp_m1()).sum();
    -offset[k] + inner.ln_1p()
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax(u) - y`.
pub fn ce_logit_gradient(logits: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_pair(logits, target)?;
    let k = one_hot_index(target)?;
    Ok(ce_logit_gradient_index(logits, k))
}

pub fn ce_logit_gradient_index(logits: &[f64], k: usize) -> Vec<f64> {
    let mut g = softmax_unchecked(logits);
    g[k] -= 1.0;
    g
}

fn check_pair(logits: &[f64], target: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if logits.len() != target.len() {
        return Err(Error::invalid(format!(
            "logits have length {} but target has length {}",
            logits.len(),
            target.len()
        )));
    }
    if let Some(u) = logits.iter().find(|u| !u.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {u}")));
    }
    Ok(())
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x >= SOFTPLUS_BRANCH {
        x + (-x).exp()
    } else if x <= -SOFTPLUS_BRANCH {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic loss: `log(1+e^{-u})` for a positive, `log(1+e^{u})` for a negative.
pub fn binary_logistic_loss(logit: f64, positive: bool) -> f64 {
    if positive {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Standard normal CDF via the complementary error function.
///
/// `libm::erfc` is a port of the FreeBSD implementation (|error| < 1 ulp), so
/// the absolute error of Φ stays well below 1e-15 everywhere.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Seed plus stream id; identical pairs reproduce identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A child stream; distinct `index` values give independent sequences.
    pub fn substream(&self, index: u64) -> Self {
        // splitmix64 finaliser over (stream, index)
        let mut z = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self {
            seed: self.seed,
            stream: z,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
