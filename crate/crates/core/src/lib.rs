//! Shapley valuation of preference-data sources for KL-regularized policy
//! alignment, on exactly computable tabular policies.
//!
//! The pipeline: each data source contributes a preference dataset; one
//! policy is aligned per source; the policy for any coalition of sources is
//! then reconstructed training-free by log-probability arithmetic over the
//! per-source policies and the reference. Coalition utilities (expected
//! evaluation reward) feed Shapley estimators, giving each source a value
//! per evaluation reward — its spatial signature.
//!
//! Everything runs on finite prompt/response spaces, so closed forms exist
//! for every step and the arithmetic identities can be checked to tight
//! tolerances.

pub mod alignment;
pub mod arithmetic;
pub mod error;
pub mod io;
pub mod policy;
pub mod reward;
pub mod synthgen;
pub mod valuation;
pub mod world;

pub use alignment::{
    dpo_fit, dpo_fit_with_trace, dpo_logit_gradient, dpo_objective, exact_aligned_policy,
    exact_coalition_policy, sequential_dpo, AlignmentConfig, FitTrace,
};
pub use arithmetic::{
    coalition_model, compose_coalition, compose_scores, CoalitionModelProvider, ProviderMode,
};
pub use error::{Error, Result};
pub use policy::{
    kl_divergence, max_tv_distance, sample_response, softmax_policy_from_logits, tv_distance,
    Policy,
};
pub use reward::{
    bt_log_likelihood, fit_bt_reward, implicit_reward, pref_prob, Gauge, OptimOptions,
    PreferenceDataset, PreferenceTriple, RewardTable, DEFAULT_L2,
};
pub use synthgen::{derive_seed, generate_preferences, make_random_world, SyntheticWorld, WorldSpec};
pub use valuation::{
    build_estimator, canonical_coalition_key, coalition_utility, estimator_names, exact_shapley,
    mc_permutation_shapley, policy_value, regression_shapley, shapley_from_permutations,
    spatial_signature, EstimatorKind, EstimatorMetadata, EstimatorOptions, SampleBudget,
    ShapleyEstimator, ShapleyResult, SpatialSignature, UtilityCache, UtilityEvaluator,
    UtilityOracle, ValuationReport, ValueMode, MAX_EXACT_SOURCES,
};
pub use world::World;
