//! `shapley`: estimate per-source values through the composed coalition
//! provider and the utility cache.

use std::collections::BTreeMap;
use std::path::Path;

use prefshap::{
    build_estimator, derive_seed, io, spatial_signature, CoalitionModelProvider,
    EstimatorOptions, Policy, RewardTable, SampleBudget, UtilityCache, UtilityEvaluator,
    ValuationReport, ValueMode,
};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Default)]
pub struct ShapleyOverrides {
    pub estimator: Option<String>,
    pub permutations: Option<usize>,
    pub samples: Option<SampleBudget>,
    pub seed: Option<u64>,
    pub eval_samples: Option<usize>,
}

pub fn cmd_shapley(
    manifest_path: &Path,
    overrides: ShapleyOverrides,
    force: bool,
) -> Result<(), CliError> {
    let (manifest, base) = RunManifest::load(manifest_path)?;
    manifest.validate_inputs(&base)?;

    let world = io::load_world(manifest.resolve(&base, &manifest.world))?;
    let reference = io::load_policy(manifest.resolve(&base, &manifest.reference))?;
    let out_dir = manifest.output_dir(&base);

    let mut per_source: BTreeMap<String, Policy> = BTreeMap::new();
    for source in &manifest.sources {
        let path = out_dir.join("policies").join(format!("{}.json", source.id));
        if !path.exists() {
            return Err(CliError::Validation(format!(
                "no fitted policy for source `{}` at {}; run `prefshap fit --manifest {}` first",
                source.id,
                path.display(),
                manifest_path.display()
            )));
        }
        per_source.insert(source.id.clone(), io::load_policy(path)?);
    }
    let provider = CoalitionModelProvider::composed(reference, per_source)?;

    let mut reward_names = Vec::new();
    let mut rewards: Vec<RewardTable> = Vec::new();
    for entry in &manifest.eval_rewards {
        reward_names.push(entry.name.clone());
        rewards.push(io::load_reward(manifest.resolve(&base, &entry.path))?);
    }

    let cache_path = out_dir.join("utility_cache.json");
    let cache = if !force && cache_path.exists() {
        io::load_cache(&cache_path)?
    } else {
        UtilityCache::new()
    };

    let mut settings = manifest.estimator.clone();
    if let Some(name) = overrides.estimator {
        settings.name = name;
    }
    if let Some(perms) = overrides.permutations {
        settings.permutations = perms;
    }
    if let Some(samples) = overrides.samples {
        settings.samples = samples;
    }
    if let Some(seed) = overrides.seed {
        settings.seed = seed;
    }

    let estimator = build_estimator(
        &settings.name,
        &EstimatorOptions {
            permutations: settings.permutations,
            samples: settings.samples,
            seed: settings.seed,
        },
    )?;

    let mode = match overrides.eval_samples {
        None => ValueMode::Exact,
        Some(m) => ValueMode::Sampled {
            num_samples: m,
            seed: derive_seed(manifest.seed, "utility-sampling"),
        },
    };
    let evaluator =
        UtilityEvaluator::new(&cache, &provider, &world, &rewards)?.with_mode(mode);
    let sources: Vec<String> = evaluator.sources().to_vec();

    let result = estimator.estimate(sources.len(), &evaluator)?;
    let report = ValuationReport {
        sources,
        rewards: reward_names,
        result,
        oracle_calls: cache.oracle_calls(),
        cache_entries: cache.len(),
    };

    io::save_valuation_report(out_dir.join("shapley.json"), &report)?;
    io::save_cache(&cache_path, &cache)?;
    let signature = spatial_signature(&report.result, &report.sources, &report.rewards)?;
    io::save_signature_csv(out_dir.join("signature.csv"), &signature)?;

    println!(
        "estimator {} over {} sources x {} rewards ({} oracle calls, {} cached coalitions)",
        estimator.name(),
        report.sources.len(),
        report.rewards.len(),
        report.oracle_calls,
        report.cache_entries
    );
    for (i, source) in report.sources.iter().enumerate() {
        let values: Vec<String> = (0..report.rewards.len())
            .map(|d| format!("{:+.6}", report.result.values[(i, d)]))
            .collect();
        println!("  {source}: {}", values.join("  "));
    }
    Ok(())
}
