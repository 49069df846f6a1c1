//! KL-regularized policy alignment.
//!
//! Three routes produce aligned policies:
//!
//! - the closed form pi(y|x) proportional to exp(r(x,y)/beta) * pi0(y|x),
//!   which maximizes E[r] - beta*KL(pi, pi0) per prompt;
//! - direct preference optimization, which maximizes the preference
//!   likelihood over the policy's logits without an explicit reward model;
//! - sequential preference optimization, which chains fits so that each
//!   dataset uses the previous output as its reference.
//!
//! At convergence all three agree: chaining fits sums the implicit rewards,
//! so the result depends on the set of datasets and not their order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{log_normalize_rows, log_sum_exp, Policy};
use crate::reward::{sigmoid, log_sigmoid, PreferenceDataset, RewardTable, DEFAULT_L2};

/// Hyperparameters for preference-based alignment fits.
///
/// `step_size` is the fraction of the stability limit 2/L taken per
/// iteration, where L is a curvature bound derived from the dataset size, so
/// the same value works across dataset scales. `l2` regularizes the implicit
/// reward of the fitted policy, mirroring the reward-fitting convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub beta: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_l2() -> f64 {
    DEFAULT_L2
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            beta: 0.1,
            step_size: 0.5,
            max_iters: 50_000,
            tol: 1e-8,
            l2: DEFAULT_L2,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "beta {} must be > 0",
                self.beta
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidInput(format!(
                "step_size {} must be > 0",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol {} must be > 0", self.tol)));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::InvalidInput(format!("l2 {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta {beta} must be > 0")));
    }
    Ok(())
}

fn check_reward_shape(reference: &Policy, reward: &RewardTable) -> Result<()> {
    if reference.shape() != reward.shape() {
        return Err(Error::DimensionMismatch(format!(
            "reference shape {:?} vs reward shape {:?}",
            reference.shape(),
            reward.shape()
        )));
    }
    Ok(())
}

/// Closed-form KL-regularized optimum: normalize reward/beta + log pi0 per
/// prompt. Invariant to per-prompt constant shifts of the reward.
pub fn exact_aligned_policy(reference: &Policy, reward: &RewardTable, beta: f64) -> Result<Policy> {
    check_beta(beta)?;
    check_reward_shape(reference, reward)?;
    let mut scores = reference.log_probs().clone();
    scores.zip_mut_with(reward.values(), |s, &r| *s += r / beta);
    Ok(Policy::from_normalized(log_normalize_rows(&scores)?))
}

/// Closed form for a coalition of rewards: normalize (sum of rewards)/beta +
/// log pi0. An empty list returns the reference unchanged.
///
/// The per-entry addends are summed in sorted order, so any permutation of
/// the input list produces a bitwise-identical policy.
pub fn exact_coalition_policy(
    reference: &Policy,
    rewards: &[RewardTable],
    beta: f64,
) -> Result<Policy> {
    check_beta(beta)?;
    if rewards.is_empty() {
        return Ok(reference.clone());
    }
    for r in rewards {
        check_reward_shape(reference, r)?;
    }
    let (np, nr) = reference.shape();
    let mut scores = reference.log_probs().clone();
    let mut addends = vec![0.0; rewards.len()];
    for x in 0..np {
        for y in 0..nr {
            for (slot, r) in addends.iter_mut().zip(rewards.iter()) {
                *slot = r.value(x, y);
            }
            addends.sort_by(f64::total_cmp);
            let total: f64 = addends.iter().sum();
            scores[(x, y)] += total / beta;
        }
    }
    Ok(Policy::from_normalized(log_normalize_rows(&scores)?))
}

fn check_data_support(policy: &Policy, data: &PreferenceDataset, role: &str) -> Result<()> {
    for t in data.triples() {
        for y in [t.chosen, t.rejected] {
            if policy.log_prob(t.prompt, y) == f64::NEG_INFINITY {
                return Err(Error::SupportViolation(format!(
                    "{role} has zero probability at (prompt {}, response {y}) referenced by the data",
                    t.prompt
                )));
            }
        }
    }
    Ok(())
}

fn check_policy_data_shape(policy: &Policy, data: &PreferenceDataset) -> Result<()> {
    if policy.shape() != (data.num_prompts(), data.num_responses()) {
        return Err(Error::DimensionMismatch(format!(
            "policy shape {:?} does not match dataset world ({}, {})",
            policy.shape(),
            data.num_prompts(),
            data.num_responses()
        )));
    }
    Ok(())
}

/// Preference log-likelihood of a policy against its reference:
/// sum over triples of log sigma(beta * (log-ratio of chosen - log-ratio of
/// rejected)). Always <= 0.
pub fn dpo_objective(
    policy: &Policy,
    reference: &Policy,
    data: &PreferenceDataset,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    check_policy_data_shape(policy, data)?;
    check_policy_data_shape(reference, data)?;
    check_data_support(policy, data, "policy")?;
    check_data_support(reference, data, "reference")?;
    let mut total = 0.0;
    for t in data.triples() {
        let margin = (policy.log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.chosen))
            - (policy.log_prob(t.prompt, t.rejected) - reference.log_prob(t.prompt, t.rejected));
        total += log_sigmoid(beta * margin);
    }
    Ok(total)
}

/// Analytic gradient of `dpo_objective` with respect to unnormalized logits
/// `z` (the policy being softmax(z) per prompt).
///
/// Log-ratios of two responses in the same row are linear in z, so the
/// gradient has the two-hot form beta * sigma(-h) * (e_chosen - e_rejected).
pub fn dpo_logit_gradient(
    logits: &Array2<f64>,
    reference: &Policy,
    data: &PreferenceDataset,
    beta: f64,
) -> Result<Array2<f64>> {
    check_beta(beta)?;
    check_policy_data_shape(reference, data)?;
    if logits.dim() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "logits shape {:?} vs reference shape {:?}",
            logits.dim(),
            reference.shape()
        )));
    }
    check_data_support(reference, data, "reference")?;
    let mut grad = Array2::<f64>::zeros(logits.dim());
    for t in data.triples() {
        let ref_margin =
            reference.log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.rejected);
        let margin = (logits[(t.prompt, t.chosen)] - logits[(t.prompt, t.rejected)]) - ref_margin;
        let g = beta * sigmoid(-beta * margin);
        grad[(t.prompt, t.chosen)] += g;
        grad[(t.prompt, t.rejected)] -= g;
    }
    Ok(grad)
}

/// Convergence diagnostics for a completed fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitTrace {
    pub iterations: usize,
    pub grad_norm: f64,
}

/// `dpo_fit` plus the iteration count and final gradient norm.
pub fn dpo_fit_with_trace(
    reference: &Policy,
    data: &PreferenceDataset,
    config: &AlignmentConfig,
) -> Result<(Policy, FitTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot run a preference fit on an empty dataset".into(),
        ));
    }
    check_policy_data_shape(reference, data)?;
    if reference
        .log_probs()
        .iter()
        .any(|&v| v == f64::NEG_INFINITY)
    {
        return Err(Error::SupportViolation(
            "preference fits require a full-support reference policy".into(),
        ));
    }

    let beta = config.beta;
    let (np, nr) = reference.shape();
    let mut logits = reference.log_probs().clone();
    let mut grad = Array2::<f64>::zeros((np, nr));

    let ref_margins: Vec<f64> = data
        .triples()
        .iter()
        .map(|t| reference.log_prob(t.prompt, t.chosen) - reference.log_prob(t.prompt, t.rejected))
        .collect();

    // Likelihood curvature is at most beta^2/2 per triple; the implicit-
    // reward penalty adds a small data-independent term.
    let curvature_bound = beta * beta * (0.5 * data.len() as f64 + 8.0 * config.l2);
    let step = config.step_size * 2.0 / curvature_bound;

    let mut row_buf = vec![0.0; nr];
    let mut grad_norm = f64::INFINITY;
    for iter in 0..config.max_iters {
        grad.fill(0.0);
        for (t, &ref_margin) in data.triples().iter().zip(&ref_margins) {
            let margin =
                (logits[(t.prompt, t.chosen)] - logits[(t.prompt, t.rejected)]) - ref_margin;
            let g = beta * sigmoid(-beta * margin);
            grad[(t.prompt, t.chosen)] += g;
            grad[(t.prompt, t.rejected)] -= g;
        }
        if config.l2 > 0.0 {
            // Penalty (l2/2)*||m||^2 on the implicit reward
            // m = beta*(z - lse(z) - log pi0); its z-gradient is
            // l2*beta*(m - p .* sum(m)) per row.
            for x in 0..np {
                for y in 0..nr {
                    row_buf[y] = logits[(x, y)];
                }
                let lse = log_sum_exp(&row_buf);
                let mut m_sum = 0.0;
                for y in 0..nr {
                    let m = beta * (logits[(x, y)] - lse - reference.log_prob(x, y));
                    row_buf[y] = m;
                    m_sum += m;
                }
                for y in 0..nr {
                    let p = (logits[(x, y)] - lse).exp();
                    grad[(x, y)] -= config.l2 * beta * (row_buf[y] - p * m_sum);
                }
            }
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= config.tol {
            let policy = Policy::from_normalized(log_normalize_rows(&logits)?);
            return Ok((
                policy,
                FitTrace {
                    iterations: iter,
                    grad_norm,
                },
            ));
        }
        logits.scaled_add(step, &grad);
    }
    Err(Error::Convergence {
        grad_norm,
        tol: config.tol,
        iterations: config.max_iters,
    })
}

/// Maximizes the preference objective over per-(prompt, response) logits by
/// full-batch gradient ascent, initialized at the reference.
pub fn dpo_fit(
    reference: &Policy,
    data: &PreferenceDataset,
    config: &AlignmentConfig,
) -> Result<Policy> {
    dpo_fit_with_trace(reference, data, config).map(|(policy, _)| policy)
}

/// Chains preference fits: dataset k is fit against the output of dataset
/// k-1 as its reference. With a single dataset this is exactly `dpo_fit`.
pub fn sequential_dpo(
    reference: &Policy,
    datasets: &[PreferenceDataset],
    config: &AlignmentConfig,
) -> Result<Policy> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput(
            "sequential alignment needs at least one dataset".into(),
        ));
    }
    let mut current = reference.clone();
    for (step, data) in datasets.iter().enumerate() {
        current = dpo_fit(&current, data, config).map_err(|e| Error::SequentialStep {
            step,
            source: Box::new(e),
        })?;
    }
    Ok(current)
}
