//! Run manifests: one JSON file that pins every input, hyperparameter, and
//! seed of a run, so re-running any command is reproducible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prefshap::{AlignmentConfig, SampleBudget};

use crate::CliError;

/// One preference-data source: its dataset and, when known, the
/// ground-truth reward it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub id: String,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_reward: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRewardEntry {
    pub name: String,
    pub path: PathBuf,
}

/// Estimator choice plus its parameters; command-line flags override these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub name: String,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_samples")]
    pub samples: SampleBudget,
    #[serde(default)]
    pub seed: u64,
}

fn default_permutations() -> usize {
    500
}

fn default_samples() -> SampleBudget {
    SampleBudget::Full
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            name: "exact".to_string(),
            permutations: default_permutations(),
            samples: default_samples(),
            seed: 0,
        }
    }
}

/// Everything a run needs. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub world: PathBuf,
    pub reference: PathBuf,
    pub sources: Vec<SourceEntry>,
    pub eval_rewards: Vec<EvalRewardEntry>,
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid manifest {}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((manifest, base))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        prefshap::io::write_json(path, self).map_err(CliError::from)
    }

    pub fn resolve(&self, base: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }

    pub fn output_dir(&self, base: &Path) -> PathBuf {
        self.resolve(base, &self.output_dir)
    }

    /// Every referenced input must exist before a run starts.
    pub fn validate_inputs(&self, base: &Path) -> Result<(), CliError> {
        let mut paths: Vec<PathBuf> = vec![
            self.resolve(base, &self.world),
            self.resolve(base, &self.reference),
        ];
        for source in &self.sources {
            paths.push(self.resolve(base, &source.dataset));
            if let Some(truth) = &source.truth_reward {
                paths.push(self.resolve(base, truth));
            }
        }
        for reward in &self.eval_rewards {
            paths.push(self.resolve(base, &reward.path));
        }
        for path in paths {
            if !path.exists() {
                return Err(CliError::Validation(format!(
                    "manifest references a missing file: {}",
                    path.display()
                )));
            }
        }
        if self.sources.is_empty() {
            return Err(CliError::Validation(
                "manifest lists no data sources".into(),
            ));
        }
        if self.eval_rewards.is_empty() {
            return Err(CliError::Validation(
                "manifest lists no evaluation rewards".into(),
            ));
        }
        let mut ids: Vec<&str> = self.sources.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.sources.len() {
            return Err(CliError::Validation(
                "manifest has duplicate source ids".into(),
            ));
        }
        Ok(())
    }
}
