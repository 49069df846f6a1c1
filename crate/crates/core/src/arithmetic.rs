//! Training-free coalition policies by log-probability arithmetic.
//!
//! Given per-source aligned policies and their shared reference, the policy
//! aligned on a coalition S is reconstructed without any further fitting by
//! normalizing the score
//!
//! ```text
//! sum_{l in S} log pi_l(y|x) + (1 - |S|) * log pi0(y|x)
//! ```
//!
//! per prompt: the per-source log-probabilities each carry reward/beta plus
//! one copy of the reference score, and the (1 - |S|) term removes the
//! surplus copies. Per-prompt constants vanish under normalization.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use crate::alignment::exact_coalition_policy;
use crate::error::{Error, Result};
use crate::policy::{log_normalize_rows, Policy};
use crate::reward::RewardTable;

/// How a provider turns a coalition into a policy.
#[derive(Debug, Clone)]
pub enum ProviderMode {
    /// Log-probability arithmetic over the per-source policies.
    Composed,
    /// Closed form over known per-source reward tables; the ground-truth
    /// baseline for measuring composition fidelity when the per-source
    /// policies come from finite-sample fits.
    ExactOracle {
        rewards: BTreeMap<String, RewardTable>,
        beta: f64,
    },
}

/// Immutable bundle of a reference policy and one aligned policy per source.
#[derive(Debug, Clone)]
pub struct CoalitionModelProvider {
    reference: Policy,
    per_source: BTreeMap<String, Policy>,
    mode: ProviderMode,
}

impl CoalitionModelProvider {
    pub fn composed(reference: Policy, per_source: BTreeMap<String, Policy>) -> Result<Self> {
        Self::with_mode(reference, per_source, ProviderMode::Composed)
    }

    pub fn exact_oracle(
        reference: Policy,
        per_source: BTreeMap<String, Policy>,
        rewards: BTreeMap<String, RewardTable>,
        beta: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta {beta} must be > 0")));
        }
        let policy_ids: Vec<&String> = per_source.keys().collect();
        let reward_ids: Vec<&String> = rewards.keys().collect();
        if policy_ids != reward_ids {
            return Err(Error::InvalidInput(
                "exact-oracle mode needs one reward table per source policy".into(),
            ));
        }
        Self::with_mode(reference, per_source, ProviderMode::ExactOracle { rewards, beta })
    }

    fn with_mode(
        reference: Policy,
        per_source: BTreeMap<String, Policy>,
        mode: ProviderMode,
    ) -> Result<Self> {
        for (id, policy) in &per_source {
            if policy.shape() != reference.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "policy for source `{id}` has shape {:?}, reference has {:?}",
                    policy.shape(),
                    reference.shape()
                )));
            }
        }
        if let ProviderMode::ExactOracle { rewards, .. } = &mode {
            for (id, reward) in rewards {
                if reward.shape() != reference.shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "reward for source `{id}` has shape {:?}, reference has {:?}",
                        reward.shape(),
                        reference.shape()
                    )));
                }
            }
        }
        Ok(CoalitionModelProvider {
            reference,
            per_source,
            mode,
        })
    }

    pub fn reference(&self) -> &Policy {
        &self.reference
    }

    pub fn mode(&self) -> &ProviderMode {
        &self.mode
    }

    pub fn num_sources(&self) -> usize {
        self.per_source.len()
    }

    /// Source identifiers in sorted order.
    pub fn source_ids(&self) -> Vec<&str> {
        self.per_source.keys().map(String::as_str).collect()
    }

    pub fn policy(&self, source_id: &str) -> Result<&Policy> {
        self.per_source
            .get(source_id)
            .ok_or_else(|| Error::UnknownSource(source_id.to_string()))
    }
}

/// Raw coalition score matrix before normalization:
/// sum of member log-probabilities plus (1 - |S|) times the reference's.
///
/// The coalition is a set, so duplicate members are unrepresentable. Members
/// are summed in sorted-identifier order, fixing the floating-point
/// summation order. The reference coefficient 1 - |S| multiplies nothing
/// when it is zero (singletons return the member's own scores, -inf entries
/// included); a negative coefficient requires the reference to have full
/// support, since (negative) * -inf would otherwise produce +inf.
pub fn compose_scores(
    provider: &CoalitionModelProvider,
    coalition: &BTreeSet<String>,
) -> Result<Array2<f64>> {
    for id in coalition {
        provider.policy(id)?;
    }
    let reference = provider.reference();
    let coeff = 1.0 - coalition.len() as f64;

    let mut scores = if coeff == 0.0 {
        Array2::zeros(reference.shape())
    } else {
        if coeff < 0.0 {
            if let Some((idx, _)) = reference
                .log_probs()
                .indexed_iter()
                .find(|(_, &v)| v == f64::NEG_INFINITY)
            {
                return Err(Error::SupportViolation(format!(
                    "reference has zero probability at (prompt {}, response {}); \
                     coalitions of two or more sources need a full-support reference",
                    idx.0, idx.1
                )));
            }
        }
        reference.log_probs().mapv(|v| coeff * v)
    };
    for id in coalition {
        let policy = provider.policy(id).expect("membership checked above");
        scores.zip_mut_with(policy.log_probs(), |s, &lp| *s += lp);
    }
    Ok(scores)
}

/// Normalized coalition policy from log-probability arithmetic.
///
/// Empty coalition: the reference. Singleton {l}: the source's own policy.
pub fn compose_coalition(
    provider: &CoalitionModelProvider,
    coalition: &BTreeSet<String>,
) -> Result<Policy> {
    let scores = compose_scores(provider, coalition)?;
    Ok(Policy::from_normalized(log_normalize_rows(&scores)?))
}

/// Dispatches on the provider mode: composed arithmetic, or the closed form
/// over the provider's reward tables.
pub fn coalition_model(
    provider: &CoalitionModelProvider,
    coalition: &BTreeSet<String>,
) -> Result<Policy> {
    match &provider.mode {
        ProviderMode::Composed => compose_coalition(provider, coalition),
        ProviderMode::ExactOracle { rewards, beta } => {
            let mut members = Vec::with_capacity(coalition.len());
            for id in coalition {
                let reward = rewards
                    .get(id)
                    .ok_or_else(|| Error::UnknownSource(id.clone()))?;
                members.push(reward.clone());
            }
            exact_coalition_policy(provider.reference(), &members, *beta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::exact_aligned_policy;
    use crate::policy::softmax_policy_from_logits;
    use ndarray::array;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn fixture() -> (Policy, BTreeMap<String, RewardTable>, f64) {
        let reference =
            softmax_policy_from_logits(&array![[0.3, -0.5, 0.9], [-1.2, 0.1, 0.4]]).unwrap();
        let mut rewards = BTreeMap::new();
        rewards.insert(
            "a".to_string(),
            RewardTable::raw(array![[0.7, -0.3, 0.1], [0.2, 0.5, -0.9]]).unwrap(),
        );
        rewards.insert(
            "b".to_string(),
            RewardTable::raw(array![[-0.4, 0.8, 0.0], [1.1, -0.2, 0.3]]).unwrap(),
        );
        rewards.insert(
            "c".to_string(),
            RewardTable::raw(array![[0.05, 0.15, -0.6], [-0.7, 0.9, 0.25]]).unwrap(),
        );
        (reference, rewards, 0.1)
    }

    fn provider_from_rewards(
        reference: &Policy,
        rewards: &BTreeMap<String, RewardTable>,
        beta: f64,
    ) -> CoalitionModelProvider {
        let per_source: BTreeMap<String, Policy> = rewards
            .iter()
            .map(|(id, r)| {
                (
                    id.clone(),
                    exact_aligned_policy(reference, r, beta).unwrap(),
                )
            })
            .collect();
        CoalitionModelProvider::composed(reference.clone(), per_source).unwrap()
    }

    #[test]
    fn empty_coalition_is_reference() {
        let (reference, rewards, beta) = fixture();
        let provider = provider_from_rewards(&reference, &rewards, beta);
        let out = compose_coalition(&provider, &BTreeSet::new()).unwrap();
        for (a, b) in out.log_probs().iter().zip(reference.log_probs().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn singleton_is_the_source_policy() {
        let (reference, rewards, beta) = fixture();
        let provider = provider_from_rewards(&reference, &rewards, beta);
        let out = compose_coalition(&provider, &set(&["b"])).unwrap();
        let expected = provider.policy("b").unwrap();
        for (a, b) in out.log_probs().iter().zip(expected.log_probs().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pair_matches_closed_form_oracle() {
        let (reference, rewards, beta) = fixture();
        let provider = provider_from_rewards(&reference, &rewards, beta);
        let composed = compose_coalition(&provider, &set(&["a", "b"])).unwrap();
        let oracle = exact_coalition_policy(
            &reference,
            &[rewards["a"].clone(), rewards["b"].clone()],
            beta,
        )
        .unwrap();
        for (a, b) in composed.log_probs().iter().zip(oracle.log_probs().iter()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn unknown_member_is_rejected() {
        let (reference, rewards, beta) = fixture();
        let provider = provider_from_rewards(&reference, &rewards, beta);
        assert!(matches!(
            compose_coalition(&provider, &set(&["a", "zz"])),
            Err(Error::UnknownSource(_))
        ));
    }

    #[test]
    fn scores_add_over_disjoint_coalitions() {
        let (reference, rewards, beta) = fixture();
        let provider = provider_from_rewards(&reference, &rewards, beta);
        let s = set(&["a"]);
        let t = set(&["b", "c"]);
        let union = set(&["a", "b", "c"]);
        let score_s = compose_scores(&provider, &s).unwrap();
        let score_t = compose_scores(&provider, &t).unwrap();
        let score_union = compose_scores(&provider, &union).unwrap();
        for ((u, a), (b, r)) in score_union
            .iter()
            .zip(score_s.iter())
            .zip(score_t.iter().zip(reference.log_probs().iter()))
        {
            assert!((u - (a + b - r)).abs() <= 1e-10);
        }
    }

    #[test]
    fn singleton_allows_reference_without_full_support() {
        let reference = Policy::from_log_probs(array![[0.0, f64::NEG_INFINITY]]).unwrap();
        let mut per_source = BTreeMap::new();
        per_source.insert(
            "a".to_string(),
            softmax_policy_from_logits(&array![[0.2, -0.1]]).unwrap(),
        );
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        // coefficient (1 - |S|) = 0 never touches the -inf entries
        let out = compose_coalition(&provider, &set(&["a"])).unwrap();
        assert!(out.prob(0, 1) > 0.0);
    }

    #[test]
    fn larger_coalitions_require_full_support_reference() {
        let reference = Policy::from_log_probs(array![[0.0, f64::NEG_INFINITY]]).unwrap();
        let mut per_source = BTreeMap::new();
        for id in ["a", "b"] {
            per_source.insert(
                id.to_string(),
                softmax_policy_from_logits(&array![[0.2, -0.1]]).unwrap(),
            );
        }
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        assert!(matches!(
            compose_coalition(&provider, &set(&["a", "b"])),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn degenerate_rows_are_rejected() {
        let reference = Policy::uniform(1, 2);
        let mut per_source = BTreeMap::new();
        per_source.insert(
            "a".to_string(),
            Policy::from_log_probs(array![[0.0, f64::NEG_INFINITY]]).unwrap(),
        );
        per_source.insert(
            "b".to_string(),
            Policy::from_log_probs(array![[f64::NEG_INFINITY, 0.0]]).unwrap(),
        );
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        assert!(matches!(
            compose_coalition(&provider, &set(&["a", "b"])),
            Err(Error::DegenerateSupport { prompt: 0 })
        ));
    }

    #[test]
    fn coalition_model_dispatches_on_mode() {
        let (reference, rewards, beta) = fixture();
        let per_source: BTreeMap<String, Policy> = rewards
            .iter()
            .map(|(id, r)| {
                (
                    id.clone(),
                    exact_aligned_policy(&reference, r, beta).unwrap(),
                )
            })
            .collect();
        let composed =
            CoalitionModelProvider::composed(reference.clone(), per_source.clone()).unwrap();
        let oracle = CoalitionModelProvider::exact_oracle(
            reference.clone(),
            per_source,
            rewards.clone(),
            beta,
        )
        .unwrap();

        let single = set(&["c"]);
        let via_composed = coalition_model(&composed, &single).unwrap();
        let via_oracle = coalition_model(&oracle, &single).unwrap();
        let direct = exact_aligned_policy(&reference, &rewards["c"], beta).unwrap();
        for y in 0..3 {
            for x in 0..2 {
                assert!((via_composed.log_prob(x, y) - direct.log_prob(x, y)).abs() < 1e-10);
                assert!((via_oracle.log_prob(x, y) - direct.log_prob(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_oracle_requires_matching_ids() {
        let (reference, rewards, beta) = fixture();
        let per_source: BTreeMap<String, Policy> = rewards
            .iter()
            .map(|(id, r)| {
                (
                    id.clone(),
                    exact_aligned_policy(&reference, r, beta).unwrap(),
                )
            })
            .collect();
        let mut missing = rewards.clone();
        missing.remove("b");
        assert!(CoalitionModelProvider::exact_oracle(reference, per_source, missing, beta)
            .is_err());
    }
}
