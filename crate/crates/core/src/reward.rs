//! Bradley-Terry reward modeling on the full (prompt, response) grid.
//!
//! A preference triple (x, y+, y-) is explained with probability
//! sigma(r(x,y+) - r(x,y-)). Rewards are identified only up to per-prompt
//! additive constants, so fitted tables are gauge-fixed to zero mean per
//! prompt before they are compared or exported.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::world::World;

/// Default L2 strength used when fitting rewards; keeps the maximizer finite
/// on separable preference data.
pub const DEFAULT_L2: f64 = 1e-3;

/// Tolerance on the per-prompt mean of a gauge-fixed table.
pub const GAUGE_TOL: f64 = 1e-9;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log sigma(x) without overflow on either tail.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Which canonical representative a reward table stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    ZeroMeanPerPrompt,
    Raw,
}

/// Scalar reward per (prompt, response) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    values: Array2<f64>,
    gauge: Gauge,
}

impl RewardTable {
    pub fn new(values: Array2<f64>, gauge: Gauge) -> Result<Self> {
        for &v in values.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite reward {v}")));
            }
        }
        if gauge == Gauge::ZeroMeanPerPrompt {
            for (x, row) in values.rows().into_iter().enumerate() {
                let mean = row.sum() / row.len() as f64;
                if mean.abs() > GAUGE_TOL {
                    return Err(Error::InvalidInput(format!(
                        "row {x} claims zero mean but has mean {mean:e}"
                    )));
                }
            }
        }
        Ok(RewardTable { values, gauge })
    }

    pub fn raw(values: Array2<f64>) -> Result<Self> {
        Self::new(values, Gauge::Raw)
    }

    /// Builds a table directly in the zero-mean gauge.
    pub fn zero_mean(values: Array2<f64>) -> Result<Self> {
        Ok(Self::raw(values)?.gauge_fixed())
    }

    /// Canonical representative: subtract each prompt's mean reward.
    /// Idempotent on already gauge-fixed tables up to rounding.
    pub fn gauge_fixed(&self) -> RewardTable {
        let mut values = self.values.clone();
        for mut row in values.rows_mut() {
            let mean = row.sum() / row.len() as f64;
            row.mapv_inplace(|v| v - mean);
        }
        RewardTable {
            values,
            gauge: Gauge::ZeroMeanPerPrompt,
        }
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[(x, y)]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn num_prompts(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_responses(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }
}

/// One pairwise comparison: `chosen` was preferred to `rejected` on `prompt`.
/// All fields are dense World indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferenceTriple {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

/// All comparisons contributed by a single data source.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    source_id: String,
    triples: Vec<PreferenceTriple>,
    num_prompts: usize,
    num_responses: usize,
}

impl PreferenceDataset {
    pub fn new(
        source_id: impl Into<String>,
        triples: Vec<PreferenceTriple>,
        world: &World,
    ) -> Result<Self> {
        for (i, t) in triples.iter().enumerate() {
            if t.prompt >= world.num_prompts() {
                return Err(Error::InvalidInput(format!(
                    "triple {i}: prompt index {} out of range",
                    t.prompt
                )));
            }
            if t.chosen >= world.num_responses() || t.rejected >= world.num_responses() {
                return Err(Error::InvalidInput(format!(
                    "triple {i}: response index out of range"
                )));
            }
            if t.chosen == t.rejected {
                return Err(Error::InvalidInput(format!(
                    "triple {i}: chosen and rejected responses coincide"
                )));
            }
        }
        Ok(PreferenceDataset {
            source_id: source_id.into(),
            triples,
            num_prompts: world.num_prompts(),
            num_responses: world.num_responses(),
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn triples(&self) -> &[PreferenceTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_responses(&self) -> usize {
        self.num_responses
    }

    fn check_table(&self, reward: &RewardTable) -> Result<()> {
        if reward.shape() != (self.num_prompts, self.num_responses) {
            return Err(Error::DimensionMismatch(format!(
                "reward shape {:?} does not match dataset world ({}, {})",
                reward.shape(),
                self.num_prompts,
                self.num_responses
            )));
        }
        Ok(())
    }
}

/// Sum over triples of log sigma(r(x,y+) - r(x,y-)). Always <= 0.
pub fn bt_log_likelihood(reward: &RewardTable, data: &PreferenceDataset) -> Result<f64> {
    data.check_table(reward)?;
    let mut total = 0.0;
    for t in data.triples() {
        let diff = reward.value(t.prompt, t.chosen) - reward.value(t.prompt, t.rejected);
        total += log_sigmoid(diff);
    }
    Ok(total)
}

/// Probability that `y_plus` beats `y_minus` on prompt `x` under the table.
///
/// The complement identity pref_prob(x, a, b) + pref_prob(x, b, a) == 1 holds
/// exactly in floating point, not just up to rounding.
pub fn pref_prob(reward: &RewardTable, x: usize, y_plus: usize, y_minus: usize) -> Result<f64> {
    let (np, nr) = reward.shape();
    if x >= np || y_plus >= nr || y_minus >= nr {
        return Err(Error::InvalidInput(format!(
            "pref_prob indices ({x}, {y_plus}, {y_minus}) out of range for shape ({np}, {nr})"
        )));
    }
    let d = reward.value(x, y_plus) - reward.value(x, y_minus);
    if d >= 0.0 {
        let t = (-d).exp();
        Ok(1.0 - t / (1.0 + t))
    } else {
        let t = d.exp();
        Ok(t / (1.0 + t))
    }
}

/// Settings for the full-batch gradient-ascent fitters.
///
/// `step_size` is the fraction of the stability limit 2/L taken each
/// iteration, where L is a curvature bound computed from the dataset size;
/// values in (0, 1) are stable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimOptions {
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            step_size: 0.5,
            max_iters: 50_000,
            tol: 1e-8,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidInput(format!(
                "step_size {} must be positive",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tol {} must be positive",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Maximizes the Bradley-Terry log-likelihood minus (l2/2)*||r||^2 by
/// full-batch gradient ascent from zero, then gauge-fixes the result.
///
/// Entries never touched by the data stay at zero; the gradient of each
/// triple sums to zero per prompt, so iterates keep zero per-prompt mean and
/// the final gauge fix is a no-op up to rounding.
pub fn fit_bt_reward(data: &PreferenceDataset, l2: f64, opts: &OptimOptions) -> Result<RewardTable> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit a reward from an empty preference dataset".into(),
        ));
    }
    if !(l2 >= 0.0) || !l2.is_finite() {
        return Err(Error::InvalidInput(format!("l2 {l2} must be >= 0")));
    }
    opts.validate()?;

    let shape = (data.num_prompts(), data.num_responses());
    let mut values = Array2::<f64>::zeros(shape);
    let mut grad = Array2::<f64>::zeros(shape);

    // Each triple contributes at most 1/2 to the spectral norm of the
    // negative Hessian (sigma' <= 1/4 on a difference of two entries).
    let curvature_bound = 0.5 * data.len() as f64 + l2;
    let step = opts.step_size * 2.0 / curvature_bound;

    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iters {
        grad.assign(&values);
        grad.mapv_inplace(|v| -l2 * v);
        for t in data.triples() {
            let d = values[(t.prompt, t.chosen)] - values[(t.prompt, t.rejected)];
            let g = sigmoid(-d);
            grad[(t.prompt, t.chosen)] += g;
            grad[(t.prompt, t.rejected)] -= g;
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= opts.tol {
            return RewardTable::raw(values).map(|r| r.gauge_fixed());
        }
        values.scaled_add(step, &grad);
    }
    Err(Error::Convergence {
        grad_norm,
        tol: opts.tol,
        iterations: opts.max_iters,
    })
}

/// Reward implied by an aligned policy relative to its reference:
/// beta * (log pi - log pi0), gauge-fixed to zero mean per prompt.
pub fn implicit_reward(policy: &Policy, reference: &Policy, beta: f64) -> Result<RewardTable> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta {beta} must be > 0")));
    }
    if policy.shape() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "policy shape {:?} vs reference shape {:?}",
            policy.shape(),
            reference.shape()
        )));
    }
    let (np, nr) = policy.shape();
    let mut values = Array2::<f64>::zeros((np, nr));
    for x in 0..np {
        for y in 0..nr {
            let lp = policy.log_prob(x, y);
            if lp == f64::NEG_INFINITY {
                return Err(Error::SupportViolation(format!(
                    "policy has zero probability at (prompt {x}, response {y}); \
                     its implicit reward is not finite"
                )));
            }
            let l0 = reference.log_prob(x, y);
            if l0 == f64::NEG_INFINITY {
                return Err(Error::SupportViolation(format!(
                    "reference has zero probability at (prompt {x}, response {y}) \
                     where the policy has mass"
                )));
            }
            values[(x, y)] = beta * (lp - l0);
        }
    }
    Ok(RewardTable::raw(values)?.gauge_fixed())
}
