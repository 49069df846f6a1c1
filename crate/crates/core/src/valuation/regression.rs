//! Shapley values by kernel-weighted least squares.
//!
//! Fit an additive surrogate u(S) ~ phi_0 + sum_{i in S} phi_i where an
//! interior coalition S (0 < |S| < n) carries the weight
//!
//! ```text
//! w(S) = (n - 1) / (C(n, |S|) * |S| * (n - |S|))
//! ```
//!
//! and the two endpoints enter as equality constraints: phi_0 = u(empty) and
//! phi_0 + sum_i phi_i = u(full). With every interior coalition included the
//! solution coincides with the exact Shapley value; subsampling coalitions
//! from the kernel distribution gives the polynomial-cost estimator.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::exact::{check_dims, check_num_sources};
use super::{
    call_oracle, EstimatorKind, EstimatorMetadata, ShapleyEstimator, ShapleyResult, UtilityOracle,
};

/// How many interior coalitions the regression design uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleBudget {
    /// Every interior coalition, with exact kernel weights.
    Full,
    /// This many coalitions drawn from the kernel distribution.
    Count(usize),
}

impl Serialize for SampleBudget {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SampleBudget::Full => serializer.serialize_str("full"),
            SampleBudget::Count(n) => serializer.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SampleBudget {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(n) => Ok(SampleBudget::Count(n as usize)),
            Raw::Text(s) if s == "full" => Ok(SampleBudget::Full),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected \"full\" or a number, got \"{s}\""
            ))),
        }
    }
}

impl std::str::FromStr for SampleBudget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(SampleBudget::Full);
        }
        s.parse::<usize>()
            .map(SampleBudget::Count)
            .map_err(|_| format!("expected \"full\" or a number, got \"{s}\""))
    }
}

impl std::fmt::Display for SampleBudget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleBudget::Full => f.write_str("full"),
            SampleBudget::Count(n) => write!(f, "{n}"),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64;
        out /= (i + 1) as f64;
    }
    out
}

/// Kernel weight of an interior coalition of size `k` out of `n` players.
pub(crate) fn kernel_weight(n: usize, k: usize) -> f64 {
    debug_assert!(k > 0 && k < n);
    (n - 1) as f64 / (binomial(n, k) * (k * (n - k)) as f64)
}

/// Interior design rows as (membership mask, weight), in mask order.
fn design_rows(n: usize, samples: SampleBudget, seed: u64) -> Result<Vec<(u64, f64)>> {
    match samples {
        SampleBudget::Full => {
            check_num_sources(n)?;
            let full_mask = (1u64 << n) - 1;
            Ok((1..full_mask)
                .map(|mask| (mask, kernel_weight(n, mask.count_ones() as usize)))
                .collect())
        }
        SampleBudget::Count(count) => {
            if count == 0 {
                return Err(Error::InvalidInput(
                    "regression needs at least one sampled coalition".into(),
                ));
            }
            // P(|S| = k) proportional to the total kernel mass of size k,
            // (n-1)/(k(n-k)); subsets are uniform within a size class.
            let size_mass: Vec<f64> = (1..n)
                .map(|k| (n - 1) as f64 / ((k * (n - k)) as f64))
                .collect();
            let size_dist = WeightedIndex::new(&size_mass)
                .map_err(|e| Error::InvalidInput(format!("bad kernel masses: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts: HashMap<u64, f64> = HashMap::new();
            for _ in 0..count {
                let k = size_dist.sample(&mut rng) + 1;
                let members = rand::seq::index::sample(&mut rng, n, k);
                let mask = members.iter().fold(0u64, |m, i| m | (1 << i));
                *counts.entry(mask).or_insert(0.0) += 1.0;
            }
            let mut rows: Vec<(u64, f64)> = counts.into_iter().collect();
            rows.sort_unstable_by_key(|&(mask, _)| mask);
            Ok(rows)
        }
    }
}

/// Kernel-weighted regression estimate of the Shapley values.
pub fn regression_shapley(
    n: usize,
    oracle: &dyn UtilityOracle,
    samples: SampleBudget,
    seed: u64,
) -> Result<ShapleyResult> {
    check_num_sources(n)?;
    let metadata = EstimatorMetadata {
        permutations: None,
        samples: Some(samples),
        seed: match samples {
            SampleBudget::Full => None,
            SampleBudget::Count(_) => Some(seed),
        },
    };

    let empty = BTreeSet::new();
    let full: BTreeSet<usize> = (0..n).collect();
    let u_empty = call_oracle(oracle, &empty)?;
    let u_full = call_oracle(oracle, &full)?;
    let dims = check_dims(&[u_empty.clone(), u_full.clone()])?;

    // With one player the constraints already determine the answer.
    if n == 1 {
        let mut values = Array2::<f64>::zeros((1, dims));
        for d in 0..dims {
            values[(0, d)] = u_full[d] - u_empty[d];
        }
        return Ok(ShapleyResult {
            values,
            estimator: EstimatorKind::Regression,
            stderr: None,
            metadata,
        });
    }

    let rows = design_rows(n, samples, seed)?;
    let utilities: Vec<Vec<f64>> = rows
        .iter()
        .map(|&(mask, _)| {
            let coalition: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let u = call_oracle(oracle, &coalition)?;
            if u.len() != dims {
                return Err(Error::DimensionMismatch(
                    "utility vectors disagree on the number of reward dimensions".into(),
                ));
            }
            Ok(u)
        })
        .collect::<Result<_>>()?;

    // Substitute both equality constraints: phi_0 = u(empty) and
    // phi_{n-1} = delta - sum of the others, leaving n-1 free coefficients.
    let m = n - 1;
    let last_bit = 1u64 << (n - 1);
    let mut features = vec![0.0f64; m];
    let mut values = Array2::<f64>::zeros((n, dims));

    for d in 0..dims {
        let delta = u_full[d] - u_empty[d];
        let mut normal = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (&(mask, weight), u) in rows.iter().zip(utilities.iter()) {
            let z_last = ((mask & last_bit) != 0) as u8 as f64;
            for (i, f) in features.iter_mut().enumerate() {
                let z_i = ((mask & (1 << i)) != 0) as u8 as f64;
                *f = z_i - z_last;
            }
            let target = u[d] - u_empty[d] - z_last * delta;
            for i in 0..m {
                if features[i] == 0.0 {
                    continue;
                }
                rhs[i] += weight * features[i] * target;
                for j in 0..m {
                    normal[(i, j)] += weight * features[i] * features[j];
                }
            }
        }
        let svd = normal.clone().svd(true, true);
        let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let eps = max_sv.max(1.0) * 1e-10;
        if svd.rank(eps) < m {
            return Err(Error::RankDeficient(format!(
                "normal equations have rank {} < {m}; sample more coalitions",
                svd.rank(eps)
            )));
        }
        let solution = svd
            .solve(&rhs, eps)
            .map_err(|e| Error::RankDeficient(e.to_string()))?;
        let mut head_sum = 0.0;
        for i in 0..m {
            values[(i, d)] = solution[i];
            head_sum += solution[i];
        }
        values[(n - 1, d)] = delta - head_sum;
    }

    Ok(ShapleyResult {
        values,
        estimator: EstimatorKind::Regression,
        stderr: None,
        metadata,
    })
}

/// Strategy wrapper for the registry.
#[derive(Debug, Clone, Copy)]
pub struct RegressionShapley {
    pub samples: SampleBudget,
    pub seed: u64,
}

impl ShapleyEstimator for RegressionShapley {
    fn name(&self) -> &'static str {
        "regression"
    }

    fn estimate(&self, num_sources: usize, oracle: &dyn UtilityOracle) -> Result<ShapleyResult> {
        regression_shapley(num_sources, oracle, self.samples, self.seed)
    }
}
