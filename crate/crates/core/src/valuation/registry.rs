//! Runtime registry of Shapley estimation strategies.
//!
//! Every estimator sits behind [`ShapleyEstimator`] and is constructed by
//! name from [`EstimatorOptions`], so callers (the CLI in particular) pick
//! the strategy at runtime without knowing the concrete types.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use crate::error::{Error, Result};

use super::exact::ExactShapley;
use super::mc::McPermutationShapley;
use super::regression::{RegressionShapley, SampleBudget};
use super::{ShapleyResult, UtilityOracle};

/// One Shapley estimation strategy.
pub trait ShapleyEstimator: Send + Sync {
    /// Canonical registry name.
    fn name(&self) -> &'static str;

    /// Estimates per-source values for `num_sources` players whose
    /// coalition utilities come from `oracle`.
    fn estimate(&self, num_sources: usize, oracle: &dyn UtilityOracle) -> Result<ShapleyResult>;
}

/// Parameters a strategy may draw on when it is built. Strategies ignore
/// the fields they do not use.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions {
    pub permutations: usize,
    pub samples: SampleBudget,
    pub seed: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            permutations: 500,
            samples: SampleBudget::Full,
            seed: 0,
        }
    }
}

type Builder = fn(&EstimatorOptions) -> Box<dyn ShapleyEstimator>;

static REGISTRY: LazyLock<BTreeMap<&'static str, Builder>> = LazyLock::new(|| {
    let mut registry: BTreeMap<&'static str, Builder> = BTreeMap::new();
    registry.insert("exact", |_| Box::new(ExactShapley));
    registry.insert("mc_permutation", |opts| {
        Box::new(McPermutationShapley {
            permutations: opts.permutations,
            seed: opts.seed,
        })
    });
    registry.insert("regression", |opts| {
        Box::new(RegressionShapley {
            samples: opts.samples,
            seed: opts.seed,
        })
    });
    registry
});

const ALIASES: &[(&str, &str)] = &[("mc", "mc_permutation")];

/// Canonical names of all registered strategies.
pub fn estimator_names() -> Vec<&'static str> {
    REGISTRY.keys().copied().collect()
}

/// Builds the named strategy. Accepts canonical names and aliases
/// (`mc` for `mc_permutation`).
pub fn build_estimator(name: &str, opts: &EstimatorOptions) -> Result<Box<dyn ShapleyEstimator>> {
    let canonical = ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map(|(_, target)| *target)
        .unwrap_or(name);
    REGISTRY
        .get(canonical)
        .map(|builder| builder(opts))
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown estimator `{name}`; available: {}",
                estimator_names().join(", ")
            ))
        })
}
