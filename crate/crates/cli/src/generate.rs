//! `gen`: materialize a synthetic run on disk.

use std::path::PathBuf;

use prefshap::{derive_seed, generate_preferences, io, make_random_world, AlignmentConfig, WorldSpec};

use crate::manifest::{EstimatorSettings, EvalRewardEntry, RunManifest, SourceEntry};
use crate::CliError;

pub struct GenArgs {
    pub out: PathBuf,
    pub sources: usize,
    pub prompts: usize,
    pub responses: usize,
    pub pairs: usize,
    pub eval_rewards: usize,
    pub reward_scale: f64,
    pub seed: u64,
}

/// Writes world, reference, datasets, rewards, and the manifest (last, so a
/// manifest on disk always references existing files). Re-running with the
/// same arguments reproduces every file byte for byte.
pub fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let spec = WorldSpec {
        num_prompts: args.prompts,
        num_responses: args.responses,
        num_sources: args.sources,
        num_eval_rewards: args.eval_rewards,
        reward_scale: args.reward_scale,
        pairs_per_source: args.pairs,
        seed: args.seed,
    };
    let synth = make_random_world(&spec)?;

    let out = &args.out;
    std::fs::create_dir_all(out).map_err(prefshap::Error::from)?;
    io::save_world(out.join("world.json"), &synth.world)?;
    io::save_policy(out.join("reference.json"), &synth.reference)?;

    let mut sources = Vec::with_capacity(args.sources);
    for (i, truth) in synth.truth_rewards.iter().enumerate() {
        let id = format!("source_{i}");
        let data = generate_preferences(
            truth,
            &synth.world,
            &id,
            args.pairs,
            derive_seed(args.seed, &format!("preferences/{id}")),
        )?;
        let dataset_rel = PathBuf::from(format!("datasets/{id}.jsonl"));
        let truth_rel = PathBuf::from(format!("rewards/truth_{id}.json"));
        io::save_preferences(out.join(&dataset_rel), &synth.world, &data)?;
        io::save_reward(out.join(&truth_rel), truth)?;
        sources.push(SourceEntry {
            id,
            dataset: dataset_rel,
            truth_reward: Some(truth_rel),
        });
    }

    let mut eval_rewards = Vec::with_capacity(args.eval_rewards);
    for (k, reward) in synth.eval_rewards.iter().enumerate() {
        let name = format!("eval_{k}");
        let rel = PathBuf::from(format!("rewards/{name}.json"));
        io::save_reward(out.join(&rel), reward)?;
        eval_rewards.push(EvalRewardEntry { name, path: rel });
    }

    let manifest = RunManifest {
        world: PathBuf::from("world.json"),
        reference: PathBuf::from("reference.json"),
        sources,
        eval_rewards,
        alignment: AlignmentConfig::default(),
        estimator: EstimatorSettings {
            seed: args.seed,
            ..EstimatorSettings::default()
        },
        output_dir: PathBuf::from("."),
        seed: args.seed,
    };
    manifest.save(&out.join("manifest.json"))?;

    println!(
        "generated {} sources x {} pairs on a {}x{} world (seed {}) in {}",
        args.sources,
        args.pairs,
        args.prompts,
        args.responses,
        args.seed,
        out.display()
    );
    Ok(())
}
