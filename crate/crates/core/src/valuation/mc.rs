//! Monte Carlo permutation sampling for Shapley values.
//!
//! Each permutation contributes one marginal-contribution sample per player;
//! averaging over uniformly random permutations is unbiased for the exact
//! value. The per-player standard error across permutations is reported.
//! When the oracle is cache-backed, repeated prefixes cost nothing.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::exact::{check_dims, check_num_sources};
use super::{
    call_oracle, EstimatorKind, EstimatorMetadata, ShapleyEstimator, ShapleyResult, UtilityOracle,
};

/// Averages marginal contributions along the given permutations.
///
/// Deterministic in the permutation list: walks may evaluate in parallel but
/// the reduction order is fixed. Feeding every permutation of 0..n exactly
/// once reproduces the exact Shapley value.
pub fn shapley_from_permutations(
    n: usize,
    oracle: &dyn UtilityOracle,
    permutations: &[Vec<usize>],
) -> Result<ShapleyResult> {
    check_num_sources(n)?;
    if permutations.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one permutation".into(),
        ));
    }
    for perm in permutations {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
    }

    let u_empty = call_oracle(oracle, &BTreeSet::new())?;
    let dims = check_dims(std::slice::from_ref(&u_empty))?;

    let marginals: Vec<Array2<f64>> = permutations
        .par_iter()
        .map(|perm| {
            let mut sample = Array2::<f64>::zeros((n, dims));
            let mut prefix = BTreeSet::new();
            let mut prev = u_empty.clone();
            for &player in perm {
                prefix.insert(player);
                let next = call_oracle(oracle, &prefix)?;
                if next.len() != dims {
                    return Err(Error::DimensionMismatch(
                        "utility vectors disagree on the number of reward dimensions".into(),
                    ));
                }
                for d in 0..dims {
                    sample[(player, d)] = next[d] - prev[d];
                }
                prev = next;
            }
            Ok(sample)
        })
        .collect::<Result<_>>()?;

    let count = marginals.len() as f64;
    let mut values = Array2::<f64>::zeros((n, dims));
    for sample in &marginals {
        values.zip_mut_with(sample, |acc, &m| *acc += m);
    }
    values.mapv_inplace(|v| v / count);

    let mut stderr = Array2::<f64>::zeros((n, dims));
    if marginals.len() >= 2 {
        for sample in &marginals {
            for i in 0..n {
                for d in 0..dims {
                    let delta = sample[(i, d)] - values[(i, d)];
                    stderr[(i, d)] += delta * delta;
                }
            }
        }
        stderr.mapv_inplace(|ss| (ss / (count - 1.0)).sqrt() / count.sqrt());
    }

    Ok(ShapleyResult {
        values,
        estimator: EstimatorKind::McPermutation,
        stderr: Some(stderr),
        metadata: EstimatorMetadata {
            permutations: Some(permutations.len()),
            samples: None,
            seed: None,
        },
    })
}

/// Samples `num_permutations` uniform permutations from the seed and
/// averages their marginal contributions.
pub fn mc_permutation_shapley(
    n: usize,
    oracle: &dyn UtilityOracle,
    num_permutations: usize,
    seed: u64,
) -> Result<ShapleyResult> {
    if num_permutations == 0 {
        return Err(Error::InvalidInput(
            "need at least one permutation".into(),
        ));
    }
    check_num_sources(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let permutations: Vec<Vec<usize>> = (0..num_permutations)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    let mut result = shapley_from_permutations(n, oracle, &permutations)?;
    result.metadata.seed = Some(seed);
    Ok(result)
}

/// Strategy wrapper for the registry.
#[derive(Debug, Clone, Copy)]
pub struct McPermutationShapley {
    pub permutations: usize,
    pub seed: u64,
}

impl ShapleyEstimator for McPermutationShapley {
    fn name(&self) -> &'static str {
        "mc_permutation"
    }

    fn estimate(&self, num_sources: usize, oracle: &dyn UtilityOracle) -> Result<ShapleyResult> {
        mc_permutation_shapley(num_sources, oracle, self.permutations, self.seed)
    }
}
