//! `verify`: numerical checks of the identities the pipeline relies on.
//!
//! (a) Composition: for every coalition, the policy composed from
//!     per-source policies must match the closed form over the ground-truth
//!     rewards. With --exact-inputs the per-source policies are themselves
//!     closed forms, so the match must be tight and a violation fails the
//!     run.
//! (b) Order invariance: chaining the per-source fits in either order must
//!     land near the closed form over the fitted rewards.
//! (c) Implicit-reward recovery: aligning on a known reward and reading the
//!     implicit reward back must return it, gauge-fixed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use prefshap::{
    exact_aligned_policy, exact_coalition_policy, fit_bt_reward, implicit_reward, io,
    max_tv_distance, sequential_dpo, compose_coalition, CoalitionModelProvider, OptimOptions,
    Policy, PreferenceDataset, RewardTable,
};

use crate::manifest::RunManifest;
use crate::CliError;

pub const COMPOSITION_LOG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionCheck {
    pub coalitions: usize,
    pub max_log_gap: f64,
    pub max_tv_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialCheck {
    pub order_tv: f64,
    pub forward_vs_closed_tv: f64,
    pub backward_vs_closed_tv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    /// "exact_inputs" or "fitted"
    pub mode: String,
    pub composition: CompositionCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequential: Option<SequentialCheck>,
    pub implicit_reward_max_error: f64,
}

fn max_log_gap(a: &Policy, b: &Policy) -> f64 {
    a.log_probs()
        .iter()
        .zip(b.log_probs().iter())
        .map(|(x, y)| {
            if *x == f64::NEG_INFINITY && *y == f64::NEG_INFINITY {
                0.0
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn cmd_verify(manifest_path: &Path, exact_inputs: bool) -> Result<(), CliError> {
    let (manifest, base) = RunManifest::load(manifest_path)?;
    manifest.validate_inputs(&base)?;
    manifest.alignment.validate().map_err(CliError::from)?;
    let config = &manifest.alignment;

    let world = io::load_world(manifest.resolve(&base, &manifest.world))?;
    let reference = io::load_policy(manifest.resolve(&base, &manifest.reference))?;
    let out_dir = manifest.output_dir(&base);

    let mut truth_rewards: BTreeMap<String, RewardTable> = BTreeMap::new();
    for source in &manifest.sources {
        let path = source.truth_reward.as_ref().ok_or_else(|| {
            CliError::Validation(format!(
                "verify needs a truth reward for source `{}`",
                source.id
            ))
        })?;
        truth_rewards.insert(source.id.clone(), io::load_reward(manifest.resolve(&base, path))?);
    }

    let mut per_source: BTreeMap<String, Policy> = BTreeMap::new();
    for source in &manifest.sources {
        let policy = if exact_inputs {
            exact_aligned_policy(&reference, &truth_rewards[&source.id], config.beta)?
        } else {
            let path = out_dir.join("policies").join(format!("{}.json", source.id));
            if !path.exists() {
                return Err(CliError::Validation(format!(
                    "no fitted policy for source `{}` at {}; run `prefshap fit` first",
                    source.id,
                    path.display()
                )));
            }
            io::load_policy(path)?
        };
        per_source.insert(source.id.clone(), policy);
    }
    let ids: Vec<String> = per_source.keys().cloned().collect();
    let provider = CoalitionModelProvider::composed(reference.clone(), per_source)?;

    // (a) composition vs the closed form over ground-truth rewards
    let n = ids.len();
    let mut max_log = 0.0f64;
    let mut max_tv = 0.0f64;
    let coalitions = 1usize << n;
    for mask in 0..coalitions {
        let coalition: BTreeSet<String> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, id)| id.clone())
            .collect();
        let members: Vec<RewardTable> = coalition
            .iter()
            .map(|id| truth_rewards[id].clone())
            .collect();
        let composed = compose_coalition(&provider, &coalition)?;
        let closed = exact_coalition_policy(&reference, &members, config.beta)?;
        max_log = max_log.max(max_log_gap(&composed, &closed));
        max_tv = max_tv.max(max_tv_distance(&composed, &closed));
    }
    let composition = CompositionCheck {
        coalitions,
        max_log_gap: max_log,
        max_tv_gap: max_tv,
    };

    // (b) sequential fits in both orders on the full coalition
    let datasets: Vec<PreferenceDataset> = manifest
        .sources
        .iter()
        .map(|source| {
            io::load_preferences(manifest.resolve(&base, &source.dataset), &world, &source.id)
                .map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;
    let non_empty: Vec<PreferenceDataset> =
        datasets.iter().filter(|d| !d.is_empty()).cloned().collect();
    let sequential = if non_empty.is_empty() {
        None
    } else {
        let forward = sequential_dpo(&reference, &non_empty, config)?;
        let reversed: Vec<PreferenceDataset> = non_empty.iter().rev().cloned().collect();
        let backward = sequential_dpo(&reference, &reversed, config)?;
        let opts = OptimOptions {
            step_size: config.step_size,
            max_iters: config.max_iters,
            tol: config.tol,
        };
        let fitted: Vec<RewardTable> = non_empty
            .iter()
            .map(|d| fit_bt_reward(d, config.l2, &opts))
            .collect::<prefshap::Result<_>>()?;
        let closed = exact_coalition_policy(&reference, &fitted, config.beta)?;
        Some(SequentialCheck {
            order_tv: max_tv_distance(&forward, &backward),
            forward_vs_closed_tv: max_tv_distance(&forward, &closed),
            backward_vs_closed_tv: max_tv_distance(&backward, &closed),
        })
    };

    // (c) implicit-reward round trip on the ground truth
    let mut reward_error = 0.0f64;
    for truth in truth_rewards.values() {
        let aligned = exact_aligned_policy(&reference, truth, config.beta)?;
        let recovered = implicit_reward(&aligned, &reference, config.beta)?;
        let expected = truth.gauge_fixed();
        for (a, b) in recovered.values().iter().zip(expected.values().iter()) {
            reward_error = reward_error.max((a - b).abs());
        }
    }

    let report = VerifyReport {
        mode: if exact_inputs { "exact_inputs" } else { "fitted" }.to_string(),
        composition,
        sequential,
        implicit_reward_max_error: reward_error,
    };
    io::write_json(out_dir.join("verify.json"), &report)?;

    println!(
        "composition over {} coalitions: max log gap {:.3e}, max TV {:.3e}",
        report.composition.coalitions,
        report.composition.max_log_gap,
        report.composition.max_tv_gap
    );
    if let Some(seq) = &report.sequential {
        println!(
            "sequential: order TV {:.3e}, vs closed form {:.3e} / {:.3e}",
            seq.order_tv, seq.forward_vs_closed_tv, seq.backward_vs_closed_tv
        );
    } else {
        println!("sequential: skipped (all datasets empty)");
    }
    println!(
        "implicit-reward recovery: max error {:.3e}",
        report.implicit_reward_max_error
    );

    if exact_inputs && report.composition.max_log_gap > COMPOSITION_LOG_TOL {
        return Err(CliError::Verification(format!(
            "composition gap {:.3e} exceeds {COMPOSITION_LOG_TOL:e} on exact inputs",
            report.composition.max_log_gap
        )));
    }
    println!("verify: ok");
    Ok(())
}
