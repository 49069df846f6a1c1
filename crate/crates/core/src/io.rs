//! File formats.
//!
//! - World: JSON `{"prompts": [...], "responses": [...], "eval_dist": [...]}`
//! - Policy: JSON `{"log_probs": [[...]]}`
//! - RewardTable: JSON `{"gauge": "...", "values": [[...]]}`
//! - PreferenceDataset: JSONL, one
//!   `{"prompt": "...", "chosen": "...", "rejected": "..."}` per line
//! - Shapley result: JSON `{"estimator", "seed", "sources", "rewards",
//!   "values", "stderr"}`
//! - Utility cache: JSON `{"oracle_calls": N, "entries": {key: [...]}}`
//!
//! All indices in matrix files refer to positions in the owning world's
//! prompt/response lists. Writers emit pretty JSON with a trailing newline;
//! identical data produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::reward::{Gauge, PreferenceDataset, PreferenceTriple, RewardTable};
use crate::valuation::{
    EstimatorKind, EstimatorMetadata, ShapleyResult, SpatialSignature, UtilityCache,
    ValuationReport,
};
use crate::world::World;

fn rows_to_array(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidInput(format!("{what}: empty matrix")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!("{what}: ragged matrix rows")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| Error::InvalidInput(format!("{what}: {e}")))
}

fn array_to_rows(values: &Array2<f64>) -> Vec<Vec<f64>> {
    values.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_world(path: impl AsRef<Path>, world: &World) -> Result<()> {
    write_json(path, world)
}

pub fn load_world(path: impl AsRef<Path>) -> Result<World> {
    read_json(path)
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    log_probs: Vec<Vec<f64>>,
}

pub fn save_policy(path: impl AsRef<Path>, policy: &Policy) -> Result<()> {
    write_json(
        path,
        &PolicyFile {
            log_probs: array_to_rows(policy.log_probs()),
        },
    )
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let file: PolicyFile = read_json(path)?;
    Policy::from_log_probs(rows_to_array(file.log_probs, "policy log_probs")?)
}

#[derive(Serialize, Deserialize)]
struct RewardFile {
    gauge: Gauge,
    values: Vec<Vec<f64>>,
}

pub fn save_reward(path: impl AsRef<Path>, reward: &RewardTable) -> Result<()> {
    write_json(
        path,
        &RewardFile {
            gauge: reward.gauge(),
            values: array_to_rows(reward.values()),
        },
    )
}

pub fn load_reward(path: impl AsRef<Path>) -> Result<RewardTable> {
    let file: RewardFile = read_json(path)?;
    RewardTable::new(rows_to_array(file.values, "reward values")?, file.gauge)
}

#[derive(Serialize, Deserialize)]
struct TripleLine {
    prompt: String,
    chosen: String,
    rejected: String,
}

/// Reads one preference triple per JSONL line, resolving identifiers
/// against the world.
pub fn load_preferences(
    path: impl AsRef<Path>,
    world: &World,
    source_id: &str,
) -> Result<PreferenceDataset> {
    let file = fs::File::open(path)?;
    let mut triples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TripleLine = serde_json::from_str(&line)?;
        triples.push(PreferenceTriple {
            prompt: world.prompt_index(&parsed.prompt)?,
            chosen: world.response_index(&parsed.chosen)?,
            rejected: world.response_index(&parsed.rejected)?,
        });
    }
    PreferenceDataset::new(source_id, triples, world)
}

pub fn save_preferences(
    path: impl AsRef<Path>,
    world: &World,
    data: &PreferenceDataset,
) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = fs::File::create(path)?;
    for t in data.triples() {
        let line = serde_json::to_string(&TripleLine {
            prompt: world.prompts()[t.prompt].clone(),
            chosen: world.responses()[t.chosen].clone(),
            rejected: world.responses()[t.rejected].clone(),
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ShapleyFile {
    estimator: EstimatorKind,
    seed: Option<u64>,
    sources: Vec<String>,
    rewards: Vec<String>,
    values: Vec<Vec<f64>>,
    stderr: Option<Vec<Vec<f64>>>,
}

pub fn save_shapley_result(
    path: impl AsRef<Path>,
    result: &ShapleyResult,
    sources: &[String],
    rewards: &[String],
) -> Result<()> {
    write_json(
        path,
        &ShapleyFile {
            estimator: result.estimator,
            seed: result.metadata.seed,
            sources: sources.to_vec(),
            rewards: rewards.to_vec(),
            values: array_to_rows(&result.values),
            stderr: result.stderr.as_ref().map(array_to_rows),
        },
    )
}

/// Loads a result plus its source and reward names.
pub fn load_shapley_result(
    path: impl AsRef<Path>,
) -> Result<(ShapleyResult, Vec<String>, Vec<String>)> {
    let file: ShapleyFile = read_json(path)?;
    let values = rows_to_array(file.values, "shapley values")?;
    let stderr = file
        .stderr
        .map(|rows| rows_to_array(rows, "shapley stderr"))
        .transpose()?;
    if file.sources.len() != values.nrows() || file.rewards.len() != values.ncols() {
        return Err(Error::DimensionMismatch(
            "shapley file names do not match the value matrix".into(),
        ));
    }
    let result = ShapleyResult {
        values,
        estimator: file.estimator,
        stderr,
        metadata: EstimatorMetadata {
            permutations: None,
            samples: None,
            seed: file.seed,
        },
    };
    Ok((result, file.sources, file.rewards))
}

/// Writes the pinned result schema from a full report.
pub fn save_valuation_report(path: impl AsRef<Path>, report: &ValuationReport) -> Result<()> {
    save_shapley_result(path, &report.result, &report.sources, &report.rewards)
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    oracle_calls: u64,
    entries: BTreeMap<String, Vec<f64>>,
}

pub fn save_cache(path: impl AsRef<Path>, cache: &UtilityCache) -> Result<()> {
    write_json(
        path,
        &CacheFile {
            oracle_calls: cache.oracle_calls(),
            entries: cache.snapshot(),
        },
    )
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<UtilityCache> {
    let file: CacheFile = read_json(path)?;
    Ok(UtilityCache::restore(file.entries, file.oracle_calls))
}

pub fn save_signature_csv(path: impl AsRef<Path>, signature: &SpatialSignature) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, signature.to_csv_string()?)?;
    Ok(())
}
