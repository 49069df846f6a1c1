//! Exact Shapley values by full coalition enumeration.
//!
//! For player i, phi_i = sum over coalitions S not containing i of
//! |S|!(n-|S|-1)!/n! * (u(S + i) - u(S)). All 2^n utilities are evaluated
//! exactly once (in parallel) and the weighted sum is accumulated in a fixed
//! order, so results are bitwise reproducible.

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{
    call_oracle, EstimatorKind, EstimatorMetadata, ShapleyEstimator, ShapleyResult, UtilityOracle,
    MAX_EXACT_SOURCES,
};

fn mask_to_set(mask: u64, n: usize) -> BTreeSet<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

pub(super) fn check_num_sources(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    if n > MAX_EXACT_SOURCES {
        return Err(Error::InvalidInput(format!(
            "{n} sources would need 2^{n} coalition evaluations; the cap is {MAX_EXACT_SOURCES}"
        )));
    }
    Ok(())
}

pub(super) fn factorials(n: usize) -> Vec<f64> {
    let mut fact = vec![1.0; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    fact
}

pub(super) fn check_dims(utilities: &[Vec<f64>]) -> Result<usize> {
    let dims = utilities
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidInput("no utilities evaluated".into()))?;
    if dims == 0 {
        return Err(Error::DimensionMismatch(
            "utility vectors are empty".into(),
        ));
    }
    if utilities.iter().any(|u| u.len() != dims) {
        return Err(Error::DimensionMismatch(
            "utility vectors disagree on the number of reward dimensions".into(),
        ));
    }
    Ok(dims)
}

/// Full-enumeration Shapley values; exactly 2^n oracle evaluations.
pub fn exact_shapley(n: usize, oracle: &dyn UtilityOracle) -> Result<ShapleyResult> {
    check_num_sources(n)?;
    let total: u64 = 1 << n;
    let utilities: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|mask| call_oracle(oracle, &mask_to_set(mask, n)))
        .collect::<Result<_>>()?;
    let dims = check_dims(&utilities)?;

    let fact = factorials(n);
    let mut values = Array2::<f64>::zeros((n, dims));
    for i in 0..n {
        let bit = 1u64 << i;
        for mask in 0..total {
            if mask & bit != 0 {
                continue;
            }
            let k = mask.count_ones() as usize;
            let weight = fact[k] * fact[n - 1 - k] / fact[n];
            let with = &utilities[(mask | bit) as usize];
            let without = &utilities[mask as usize];
            for d in 0..dims {
                values[(i, d)] += weight * (with[d] - without[d]);
            }
        }
    }
    Ok(ShapleyResult {
        values,
        estimator: EstimatorKind::Exact,
        stderr: None,
        metadata: EstimatorMetadata::default(),
    })
}

/// Strategy wrapper for the registry.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactShapley;

impl ShapleyEstimator for ExactShapley {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn estimate(&self, num_sources: usize, oracle: &dyn UtilityOracle) -> Result<ShapleyResult> {
        exact_shapley(num_sources, oracle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_from_table(
        table: Vec<(Vec<usize>, Vec<f64>)>,
    ) -> impl Fn(&BTreeSet<usize>) -> Result<Vec<f64>> {
        move |coalition: &BTreeSet<usize>| {
            let key: Vec<usize> = coalition.iter().copied().collect();
            table
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::InvalidInput(format!("no utility for {key:?}")))
        }
    }

    /// Independent oracle: average marginal contributions over every
    /// permutation, enumerated by brute force.
    pub(crate) fn permutation_brute_force(
        n: usize,
        utility: &dyn Fn(&BTreeSet<usize>) -> Vec<f64>,
    ) -> Vec<Vec<f64>> {
        fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for (i, &head) in items.iter().enumerate() {
                let mut rest = items.to_vec();
                rest.remove(i);
                for mut tail in permutations(&rest) {
                    let mut perm = vec![head];
                    perm.append(&mut tail);
                    out.push(perm);
                }
            }
            out
        }
        let dims = utility(&BTreeSet::new()).len();
        let perms = permutations(&(0..n).collect::<Vec<_>>());
        let mut totals = vec![vec![0.0; dims]; n];
        for perm in &perms {
            let mut prefix = BTreeSet::new();
            let mut prev = utility(&prefix);
            for &player in perm {
                prefix.insert(player);
                let next = utility(&prefix);
                for d in 0..dims {
                    totals[player][d] += next[d] - prev[d];
                }
                prev = next;
            }
        }
        for row in &mut totals {
            for v in row.iter_mut() {
                *v /= perms.len() as f64;
            }
        }
        totals
    }

    #[test]
    fn two_player_example() {
        let oracle = oracle_from_table(vec![
            (vec![], vec![0.0]),
            (vec![0], vec![1.0]),
            (vec![1], vec![2.0]),
            (vec![0, 1], vec![4.0]),
        ]);
        // independent check by brute-force permutation enumeration
        let brute = permutation_brute_force(2, &|s| oracle(s).unwrap());
        assert!((brute[0][0] - 1.5).abs() < 1e-12);
        assert!((brute[1][0] - 2.5).abs() < 1e-12);

        let result = exact_shapley(2, &oracle).unwrap();
        assert!((result.values[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((result.values[(1, 0)] - 2.5).abs() < 1e-12);
        assert_eq!(result.estimator, EstimatorKind::Exact);
        assert!(result.stderr.is_none());
    }

    #[test]
    fn additive_utility_returns_the_addends() {
        let costs = [0.5, -1.25, 2.0, 0.75];
        let oracle = move |s: &BTreeSet<usize>| {
            Ok(vec![s.iter().map(|&i| costs[i]).sum::<f64>()])
        };
        let result = exact_shapley(4, &oracle).unwrap();
        for (i, &c) in costs.iter().enumerate() {
            assert!((result.values[(i, 0)] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_players_get_equal_values() {
        // utility depends only on |S|, so players 0 and 1 (and all others)
        // are interchangeable
        let oracle = |s: &BTreeSet<usize>| Ok(vec![(s.len() * s.len()) as f64]);
        let result = exact_shapley(3, &oracle).unwrap();
        assert!((result.values[(0, 0)] - result.values[(1, 0)]).abs() <= 1e-12);
        assert!((result.values[(1, 0)] - result.values[(2, 0)]).abs() <= 1e-12);
    }

    #[test]
    fn efficiency_holds_per_dimension() {
        let oracle = |s: &BTreeSet<usize>| {
            let k = s.len() as f64;
            let contains0 = s.contains(&0) as u8 as f64;
            Ok(vec![k.sqrt() + 0.3 * contains0, k * k - 2.0 * contains0])
        };
        let n = 4;
        let result = exact_shapley(n, &oracle).unwrap();
        let full: BTreeSet<usize> = (0..n).collect();
        let u_full = oracle(&full).unwrap();
        let u_empty = oracle(&BTreeSet::new()).unwrap();
        for d in 0..2 {
            let total: f64 = (0..n).map(|i| result.values[(i, d)]).sum();
            assert!(
                (total - (u_full[d] - u_empty[d])).abs() <= 1e-9,
                "dimension {d}"
            );
        }
    }

    #[test]
    fn oracle_failure_names_the_coalition() {
        let oracle = |s: &BTreeSet<usize>| {
            if s.len() == 2 {
                Err(Error::InvalidInput("broken".into()))
            } else {
                Ok(vec![s.len() as f64])
            }
        };
        let err = exact_shapley(3, &oracle).unwrap_err();
        match err {
            Error::Oracle { coalition, .. } => assert_eq!(coalition.len(), 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn source_count_limits() {
        let oracle = |s: &BTreeSet<usize>| Ok(vec![s.len() as f64]);
        assert!(exact_shapley(0, &oracle).is_err());
        assert!(exact_shapley(MAX_EXACT_SOURCES + 1, &oracle).is_err());
        let single = exact_shapley(1, &oracle).unwrap();
        assert!((single.values[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
