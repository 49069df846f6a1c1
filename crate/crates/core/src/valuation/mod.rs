//! Coalition utilities and Shapley attribution.
//!
//! The utility of a coalition of data sources is the expected evaluation
//! reward of its coalition policy. Shapley values split the grand
//! coalition's utility among sources; three interchangeable estimators live
//! behind the [`ShapleyEstimator`] trait and are selected by name through
//! [`build_estimator`].

mod cache;
mod exact;
mod mc;
mod regression;
mod registry;
mod signature;

pub use cache::{canonical_coalition_key, UtilityCache};
pub use exact::{exact_shapley, ExactShapley};
pub use mc::{mc_permutation_shapley, shapley_from_permutations, McPermutationShapley};
pub use regression::{regression_shapley, RegressionShapley, SampleBudget};
pub use registry::{build_estimator, estimator_names, EstimatorOptions, ShapleyEstimator};
pub use signature::{spatial_signature, SignatureRow, SpatialSignature};

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{coalition_model, CoalitionModelProvider};
use crate::error::{Error, Result};
use crate::policy::{sample_response, Policy};
use crate::reward::RewardTable;
use crate::world::World;

/// Exhaustive enumeration is capped at this many sources (2^n coalitions).
pub const MAX_EXACT_SOURCES: usize = 20;

/// How a policy's value is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    /// Full expectation over the evaluation distribution and the policy.
    Exact,
    /// Finite-sample average: draw prompts from the evaluation distribution
    /// and one response each. Deterministic given the seed.
    Sampled { num_samples: usize, seed: u64 },
}

fn check_world_shapes(policy: &Policy, world: &World, reward: &RewardTable) -> Result<()> {
    let expected = (world.num_prompts(), world.num_responses());
    if policy.shape() != expected {
        return Err(Error::DimensionMismatch(format!(
            "policy shape {:?} does not match world {:?}",
            policy.shape(),
            expected
        )));
    }
    if reward.shape() != expected {
        return Err(Error::DimensionMismatch(format!(
            "reward shape {:?} does not match world {:?}",
            reward.shape(),
            expected
        )));
    }
    Ok(())
}

fn sample_prompt<R: Rng + ?Sized>(world: &World, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_supported = 0;
    for (x, &p) in world.eval_dist().iter().enumerate() {
        if p > 0.0 {
            last_supported = x;
        }
        cum += p;
        if u < cum {
            return x;
        }
    }
    last_supported
}

/// Expected evaluation reward of a policy.
pub fn policy_value(
    policy: &Policy,
    world: &World,
    reward: &RewardTable,
    mode: ValueMode,
) -> Result<f64> {
    check_world_shapes(policy, world, reward)?;
    match mode {
        ValueMode::Exact => {
            let mut total = 0.0;
            for (x, &weight) in world.eval_dist().iter().enumerate() {
                if weight == 0.0 {
                    continue;
                }
                let mut per_prompt = 0.0;
                for y in 0..world.num_responses() {
                    let p = policy.prob(x, y);
                    if p > 0.0 {
                        per_prompt += p * reward.value(x, y);
                    }
                }
                total += weight * per_prompt;
            }
            Ok(total)
        }
        ValueMode::Sampled { num_samples, seed } => {
            if num_samples == 0 {
                return Err(Error::InvalidInput(
                    "sampled evaluation needs at least one draw".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..num_samples {
                let x = sample_prompt(world, &mut rng);
                let y = sample_response(policy, x, &mut rng);
                total += reward.value(x, y);
            }
            Ok(total / num_samples as f64)
        }
    }
}

/// A total function from coalitions (as index sets over 0..n) to utility
/// vectors, one entry per evaluation reward.
pub trait UtilityOracle: Sync {
    fn utility(&self, coalition: &BTreeSet<usize>) -> Result<Vec<f64>>;
}

impl<F> UtilityOracle for F
where
    F: Fn(&BTreeSet<usize>) -> Result<Vec<f64>> + Sync,
{
    fn utility(&self, coalition: &BTreeSet<usize>) -> Result<Vec<f64>> {
        self(coalition)
    }
}

pub(crate) fn call_oracle(
    oracle: &dyn UtilityOracle,
    coalition: &BTreeSet<usize>,
) -> Result<Vec<f64>> {
    oracle.utility(coalition).map_err(|e| Error::Oracle {
        coalition: coalition.clone(),
        source: Box::new(e),
    })
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Cache-backed utility oracle over a coalition-model provider.
///
/// Player indices map to the provider's sorted source identifiers. Utilities
/// for all evaluation rewards are computed together when a coalition is
/// first seen, so the cache counter equals the number of coalition policies
/// ever built.
pub struct UtilityEvaluator<'a> {
    cache: &'a UtilityCache,
    provider: &'a CoalitionModelProvider,
    world: &'a World,
    rewards: &'a [RewardTable],
    mode: ValueMode,
    sources: Vec<String>,
}

impl<'a> UtilityEvaluator<'a> {
    pub fn new(
        cache: &'a UtilityCache,
        provider: &'a CoalitionModelProvider,
        world: &'a World,
        rewards: &'a [RewardTable],
    ) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::InvalidInput(
                "utility evaluation needs at least one evaluation reward".into(),
            ));
        }
        let expected = (world.num_prompts(), world.num_responses());
        if provider.reference().shape() != expected {
            return Err(Error::DimensionMismatch(format!(
                "provider policies have shape {:?}, world has {:?}",
                provider.reference().shape(),
                expected
            )));
        }
        for r in rewards {
            if r.shape() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "evaluation reward shape {:?} does not match world {:?}",
                    r.shape(),
                    expected
                )));
            }
        }
        let sources = provider
            .source_ids()
            .into_iter()
            .map(str::to_string)
            .collect();
        Ok(UtilityEvaluator {
            cache,
            provider,
            world,
            rewards,
            mode: ValueMode::Exact,
            sources,
        })
    }

    pub fn with_mode(mut self, mode: ValueMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn utility_by_ids(&self, coalition: &BTreeSet<String>) -> Result<Vec<f64>> {
        for id in coalition {
            self.provider.policy(id)?;
        }
        let key = canonical_coalition_key(coalition.iter());
        self.cache.get_or_compute(&key, || {
            let policy = coalition_model(self.provider, coalition)?;
            let mode = match self.mode {
                ValueMode::Exact => ValueMode::Exact,
                // decorrelate coalitions while staying reproducible
                ValueMode::Sampled { num_samples, seed } => ValueMode::Sampled {
                    num_samples,
                    seed: seed ^ fnv1a(&key),
                },
            };
            self.rewards
                .iter()
                .map(|r| policy_value(&policy, self.world, r, mode))
                .collect()
        })
    }
}

impl UtilityOracle for UtilityEvaluator<'_> {
    fn utility(&self, coalition: &BTreeSet<usize>) -> Result<Vec<f64>> {
        let mut ids = BTreeSet::new();
        for &i in coalition {
            let id = self.sources.get(i).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "player index {i} out of range for {} sources",
                    self.sources.len()
                ))
            })?;
            ids.insert(id.clone());
        }
        self.utility_by_ids(&ids)
    }
}

/// Cached utility vector of one coalition under the exact evaluation mode.
pub fn coalition_utility(
    cache: &UtilityCache,
    provider: &CoalitionModelProvider,
    coalition: &BTreeSet<String>,
    world: &World,
    rewards: &[RewardTable],
) -> Result<Vec<f64>> {
    UtilityEvaluator::new(cache, provider, world, rewards)?.utility_by_ids(coalition)
}

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Exact,
    McPermutation,
    Regression,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::McPermutation => "mc_permutation",
            EstimatorKind::Regression => "regression",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimator provenance: sampling budgets and the seed, where applicable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorMetadata {
    pub permutations: Option<usize>,
    pub samples: Option<SampleBudget>,
    pub seed: Option<u64>,
}

/// Per-source Shapley values, one column per evaluation reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyResult {
    pub values: Array2<f64>,
    pub estimator: EstimatorKind,
    /// Per-source standard errors; present exactly for the permutation
    /// estimator.
    pub stderr: Option<Array2<f64>>,
    pub metadata: EstimatorMetadata,
}

impl ShapleyResult {
    pub fn num_sources(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_rewards(&self) -> usize {
        self.values.ncols()
    }
}

/// A Shapley result joined with the names it was computed over and the
/// utility-cache statistics of the run.
#[derive(Debug, Clone)]
pub struct ValuationReport {
    pub sources: Vec<String>,
    pub rewards: Vec<String>,
    pub result: ShapleyResult,
    pub oracle_calls: u64,
    pub cache_entries: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::exact_aligned_policy;
    use crate::policy::softmax_policy_from_logits;
    use ndarray::array;
    use std::collections::BTreeMap;

    fn world_2x2() -> World {
        World::new(
            vec!["p0".into(), "p1".into()],
            vec!["r0".into(), "r1".into()],
            vec![0.25, 0.75],
        )
        .unwrap()
    }

    #[test]
    fn policy_value_uniform_symmetric() {
        let world = World::with_uniform_eval(vec!["p0".into()], vec!["a".into(), "b".into()])
            .unwrap();
        let policy = Policy::uniform(1, 2);
        let reward = RewardTable::raw(array![[1.0, 0.0]]).unwrap();
        let v = policy_value(&policy, &world, &reward, ValueMode::Exact).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn policy_value_deterministic_argmax() {
        let world = world_2x2();
        let policy = Policy::from_log_probs(array![
            [0.0, f64::NEG_INFINITY],
            [f64::NEG_INFINITY, 0.0]
        ])
        .unwrap();
        let reward = RewardTable::raw(array![[3.0, -1.0], [0.0, 2.0]]).unwrap();
        let v = policy_value(&policy, &world, &reward, ValueMode::Exact).unwrap();
        assert!((v - (0.25 * 3.0 + 0.75 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn policy_value_sampled_concentrates() {
        let world = world_2x2();
        let policy = softmax_policy_from_logits(&array![[0.4, -0.2], [1.0, 0.3]]).unwrap();
        let reward = RewardTable::raw(array![[0.9, -0.4], [0.2, 1.4]]).unwrap();
        let exact = policy_value(&policy, &world, &reward, ValueMode::Exact).unwrap();
        let sampled = policy_value(
            &policy,
            &world,
            &reward,
            ValueMode::Sampled {
                num_samples: 100_000,
                seed: 11,
            },
        )
        .unwrap();
        assert!((sampled - exact).abs() < 0.01, "{sampled} vs {exact}");
        let again = policy_value(
            &policy,
            &world,
            &reward,
            ValueMode::Sampled {
                num_samples: 100_000,
                seed: 11,
            },
        )
        .unwrap();
        assert_eq!(sampled.to_bits(), again.to_bits());
    }

    fn evaluator_fixture() -> (World, Policy, BTreeMap<String, Policy>, Vec<RewardTable>) {
        let world = world_2x2();
        let reference = softmax_policy_from_logits(&array![[0.3, -0.5], [-1.2, 0.1]]).unwrap();
        let beta = 0.5;
        let mut per_source = BTreeMap::new();
        for (id, values) in [
            ("s0", array![[0.7, -0.7], [0.3, -0.3]]),
            ("s1", array![[-0.2, 0.2], [0.8, -0.8]]),
        ] {
            let reward = RewardTable::raw(values).unwrap();
            per_source.insert(
                id.to_string(),
                exact_aligned_policy(&reference, &reward, beta).unwrap(),
            );
        }
        let rewards = vec![
            RewardTable::raw(array![[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            RewardTable::raw(array![[0.0, 2.0], [1.0, 0.0]]).unwrap(),
        ];
        (world, reference, per_source, rewards)
    }

    #[test]
    fn empty_coalition_utility_is_reference_value() {
        let (world, reference, per_source, rewards) = evaluator_fixture();
        let provider =
            CoalitionModelProvider::composed(reference.clone(), per_source).unwrap();
        let cache = UtilityCache::new();
        let u = coalition_utility(&cache, &provider, &BTreeSet::new(), &world, &rewards)
            .unwrap();
        for (k, reward) in rewards.iter().enumerate() {
            let direct = policy_value(&reference, &world, reward, ValueMode::Exact).unwrap();
            assert!((u[k] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_queries_do_not_recount() {
        let (world, reference, per_source, rewards) = evaluator_fixture();
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        let cache = UtilityCache::new();
        let coalition: BTreeSet<String> = ["s0".to_string()].into();
        let first =
            coalition_utility(&cache, &provider, &coalition, &world, &rewards).unwrap();
        assert_eq!(cache.oracle_calls(), 1);
        let second =
            coalition_utility(&cache, &provider, &coalition, &world, &rewards).unwrap();
        assert_eq!(cache.oracle_calls(), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn full_enumeration_counts_each_coalition_once() {
        let (world, reference, per_source, rewards) = evaluator_fixture();
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        let cache = UtilityCache::new();
        let evaluator = UtilityEvaluator::new(&cache, &provider, &world, &rewards).unwrap();
        let n = evaluator.num_sources();
        for mask in 0u32..(1 << n) {
            let coalition: BTreeSet<usize> =
                (0..n).filter(|i| mask & (1 << i) != 0).collect();
            evaluator.utility(&coalition).unwrap();
            // ask twice; the second hit must be free
            evaluator.utility(&coalition).unwrap();
        }
        assert_eq!(cache.oracle_calls(), 1 << n);
        assert_eq!(cache.len(), 1 << n);
    }

    #[test]
    fn unknown_source_id_is_rejected() {
        let (world, reference, per_source, rewards) = evaluator_fixture();
        let provider = CoalitionModelProvider::composed(reference, per_source).unwrap();
        let cache = UtilityCache::new();
        let coalition: BTreeSet<String> = ["nope".to_string()].into();
        assert!(matches!(
            coalition_utility(&cache, &provider, &coalition, &world, &rewards),
            Err(Error::UnknownSource(_))
        ));
    }
}
