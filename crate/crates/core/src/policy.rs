//! Exact tabular stochastic policies in log space.
//!
//! A policy maps each prompt to a distribution over responses. Everything is
//! stored as natural-log probabilities and normalized with log-sum-exp, so
//! scores with large magnitude (e.g. reward/beta terms) never overflow. Zero
//! probability is represented as -inf; NaN and +inf are rejected everywhere.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on per-prompt log-sum-exp of a stored policy being zero.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Per-(prompt, response) log-probability table, normalized per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    log_probs: Array2<f64>,
}

/// Log-sum-exp of a slice, treating -inf entries as absent mass.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes each row of a score matrix into log-probabilities.
///
/// Rows may contain -inf (zero probability); a row that is entirely -inf has
/// no support left and is rejected.
pub(crate) fn log_normalize_rows(scores: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = scores.clone();
    for (x, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "score {v} for prompt index {x} is not usable"
                )));
            }
            max = max.max(v);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateSupport { prompt: x });
        }
        // Subtracting the max first keeps the result shift-invariant even
        // for large per-prompt offsets.
        row.mapv_inplace(|v| v - max);
        let log_norm = row.iter().map(|&v| v.exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - log_norm);
    }
    Ok(out)
}

impl Policy {
    /// Wraps an already-normalized log-probability table, validating the
    /// normalization invariant. Entries may be -inf but never NaN or +inf.
    pub fn from_log_probs(log_probs: Array2<f64>) -> Result<Self> {
        for (x, row) in log_probs.rows().into_iter().enumerate() {
            for &v in row.iter() {
                if v.is_nan() || v == f64::INFINITY {
                    return Err(Error::InvalidInput(format!(
                        "log-probability {v} for prompt index {x} is not usable"
                    )));
                }
            }
            let lse = log_sum_exp(row.as_slice().expect("row is contiguous"));
            if lse == f64::NEG_INFINITY {
                return Err(Error::DegenerateSupport { prompt: x });
            }
            if lse.abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {x} is not normalized: log-sum-exp = {lse:e}"
                )));
            }
        }
        Ok(Policy { log_probs })
    }

    /// Uniform policy over all responses for every prompt.
    pub fn uniform(num_prompts: usize, num_responses: usize) -> Self {
        let lp = -(num_responses as f64).ln();
        Policy {
            log_probs: Array2::from_elem((num_prompts, num_responses), lp),
        }
    }

    pub(crate) fn from_normalized(log_probs: Array2<f64>) -> Self {
        Policy { log_probs }
    }

    pub fn num_prompts(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn num_responses(&self) -> usize {
        self.log_probs.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.log_probs.nrows(), self.log_probs.ncols())
    }

    /// Stored log-probability of response `y` given prompt `x`.
    pub fn log_prob(&self, x: usize, y: usize) -> f64 {
        self.log_probs[(x, y)]
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.log_probs[(x, y)].exp()
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }
}

/// Softmax-normalizes a finite score matrix into a policy, per prompt.
///
/// Shift-invariant: adding a per-prompt constant to the logits yields an
/// identical policy up to rounding.
pub fn softmax_policy_from_logits(logits: &Array2<f64>) -> Result<Policy> {
    for &v in logits.iter() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite logit {v}")));
        }
    }
    Ok(Policy::from_normalized(log_normalize_rows(logits)?))
}

fn check_same_shape(p: &Policy, q: &Policy) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(Error::DimensionMismatch(format!(
            "policy shapes {:?} and {:?} differ",
            p.shape(),
            q.shape()
        )));
    }
    Ok(())
}

/// KL(p(.|x) || q(.|x)) = sum_y p log(p/q), skipping zero-probability terms.
///
/// Errors if `p` puts mass where `q` has none.
pub fn kl_divergence(p: &Policy, q: &Policy, x: usize) -> Result<f64> {
    check_same_shape(p, q)?;
    let mut acc = 0.0;
    for y in 0..p.num_responses() {
        let lp = p.log_prob(x, y);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let lq = q.log_prob(x, y);
        if lq == f64::NEG_INFINITY {
            return Err(Error::SupportViolation(format!(
                "p has mass at (prompt {x}, response {y}) where q has none"
            )));
        }
        acc += lp.exp() * (lp - lq);
    }
    Ok(acc.max(0.0))
}

/// Draws one response from the policy's conditional distribution at `x`.
/// Deterministic given the state of `rng`.
pub fn sample_response<R: Rng + ?Sized>(policy: &Policy, x: usize, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_supported = 0;
    for y in 0..policy.num_responses() {
        let p = policy.prob(x, y);
        if p > 0.0 {
            last_supported = y;
        }
        cum += p;
        if u < cum {
            return y;
        }
    }
    // Rounding can leave cum slightly below 1; fall back to the last
    // supported response.
    last_supported
}

/// Total variation distance between the conditionals at prompt `x`.
pub fn tv_distance(p: &Policy, q: &Policy, x: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0..p.num_responses() {
        acc += (p.prob(x, y) - q.prob(x, y)).abs();
    }
    0.5 * acc
}

/// Maximum per-prompt total variation distance.
pub fn max_tv_distance(p: &Policy, q: &Policy) -> f64 {
    (0..p.num_prompts())
        .map(|x| tv_distance(p, q, x))
        .fold(0.0, f64::max)
}
