//! Synthetic worlds with known ground truth.
//!
//! Generates a random world, a full-support reference policy, per-source
//! ground-truth reward tables, and evaluation reward tables, all as pure
//! functions of a seed. Preference data is then drawn from the ground truth,
//! so every downstream estimate has a checkable oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::policy::{softmax_policy_from_logits, Policy};
use crate::reward::{sigmoid, PreferenceDataset, PreferenceTriple, RewardTable};
use crate::world::World;

fn default_eval_rewards() -> usize {
    2
}

/// Shape and scale of a generated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_prompts: usize,
    pub num_responses: usize,
    pub num_sources: usize,
    #[serde(default = "default_eval_rewards")]
    pub num_eval_rewards: usize,
    pub reward_scale: f64,
    pub pairs_per_source: usize,
    pub seed: u64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("num_prompts", self.num_prompts),
            ("num_responses", self.num_responses),
            ("num_sources", self.num_sources),
            ("num_eval_rewards", self.num_eval_rewards),
            ("pairs_per_source", self.pairs_per_source),
        ] {
            if value == 0 {
                return Err(Error::InvalidInput(format!("{name} must be >= 1")));
            }
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::InvalidInput(format!(
                "reward_scale {} must be > 0",
                self.reward_scale
            )));
        }
        Ok(())
    }
}

/// A generated world and everything known to be true about it.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub world: World,
    pub reference: Policy,
    /// Ground-truth reward per data source, gauge-fixed.
    pub truth_rewards: Vec<RewardTable>,
    /// Evaluation rewards (the axes of the value space), gauge-fixed.
    pub eval_rewards: Vec<RewardTable>,
}

impl SyntheticWorld {
    pub fn source_ids(&self) -> Vec<String> {
        (0..self.truth_rewards.len())
            .map(|i| format!("source_{i}"))
            .collect()
    }

    pub fn eval_names(&self) -> Vec<String> {
        (0..self.eval_rewards.len())
            .map(|i| format!("eval_{i}"))
            .collect()
    }
}

fn random_table<R: Rng>(shape: (usize, usize), scale: f64, rng: &mut R) -> Result<RewardTable> {
    let normal = Normal::new(0.0, scale)
        .map_err(|e| Error::InvalidInput(format!("bad reward scale: {e}")))?;
    let values = Array2::from_shape_fn(shape, |_| normal.sample(rng));
    RewardTable::zero_mean(values)
}

/// Builds a world, reference policy, and reward tables from the spec.
/// Identical specs produce identical outputs.
pub fn make_random_world(spec: &WorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let prompts: Vec<String> = (0..spec.num_prompts).map(|i| format!("p{i}")).collect();
    let responses: Vec<String> = (0..spec.num_responses).map(|i| format!("r{i}")).collect();

    // softmax of unit normals: a random positive distribution over prompts
    let weights: Vec<f64> = (0..spec.num_prompts)
        .map(|_| f64::exp(standard.sample(&mut rng)))
        .collect();
    let total: f64 = weights.iter().sum();
    let eval_dist: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let world = World::new(prompts, responses, eval_dist)?;

    let shape = (spec.num_prompts, spec.num_responses);
    let logits = Array2::from_shape_fn(shape, |_| standard.sample(&mut rng));
    let reference = softmax_policy_from_logits(&logits)?;

    let truth_rewards = (0..spec.num_sources)
        .map(|_| random_table(shape, spec.reward_scale, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let eval_rewards = (0..spec.num_eval_rewards)
        .map(|_| random_table(shape, spec.reward_scale, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticWorld {
        world,
        reference,
        truth_rewards,
        eval_rewards,
    })
}

/// Draws preference triples from the ground truth: prompt from the
/// evaluation distribution, two distinct responses uniformly, winner with
/// probability sigma(r(x, y1) - r(x, y2)).
pub fn generate_preferences(
    truth: &RewardTable,
    world: &World,
    source_id: &str,
    num_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if num_pairs == 0 {
        return Err(Error::InvalidInput("num_pairs must be >= 1".into()));
    }
    if world.num_responses() < 2 {
        return Err(Error::InvalidInput(
            "preference generation needs at least two responses".into(),
        ));
    }
    if truth.shape() != (world.num_prompts(), world.num_responses()) {
        return Err(Error::DimensionMismatch(format!(
            "truth reward shape {:?} does not match world ({}, {})",
            truth.shape(),
            world.num_prompts(),
            world.num_responses()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_responses = world.num_responses();
    let mut triples = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let x = sample_eval_prompt(world, &mut rng);
        let first = rng.gen_range(0..num_responses);
        let mut second = rng.gen_range(0..num_responses - 1);
        if second >= first {
            second += 1;
        }
        let p_first_wins = sigmoid(truth.value(x, first) - truth.value(x, second));
        let (chosen, rejected) = if rng.gen::<f64>() < p_first_wins {
            (first, second)
        } else {
            (second, first)
        };
        triples.push(PreferenceTriple {
            prompt: x,
            chosen,
            rejected,
        });
    }
    PreferenceDataset::new(source_id, triples, world)
}

fn sample_eval_prompt<R: Rng>(world: &World, rng: &mut R) -> usize {
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

/// Stable per-purpose sub-seed so independent streams never overlap.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for byte in tag.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
