//! `fit`: one alignment per data source, run concurrently.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use prefshap::{dpo_fit_with_trace, io, PreferenceDataset};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFit {
    pub id: String,
    /// fitted | reused | empty_reference | failed
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Written next to the policies after every `fit` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Optimizations actually performed in this invocation (reused and
    /// empty sources do not count).
    pub fits_performed: usize,
    pub sources: Vec<SourceFit>,
}

enum Outcome {
    Fitted { iterations: usize, grad_norm: f64 },
    Reused,
    EmptyReference,
    Failed(String),
}

pub fn cmd_fit(manifest_path: &Path, force: bool) -> Result<(), CliError> {
    let (manifest, base) = RunManifest::load(manifest_path)?;
    manifest.validate_inputs(&base)?;
    manifest.alignment.validate().map_err(CliError::from)?;

    let world = io::load_world(manifest.resolve(&base, &manifest.world))?;
    let reference = io::load_policy(manifest.resolve(&base, &manifest.reference))?;
    let out_dir = manifest.output_dir(&base);
    let policies_dir = out_dir.join("policies");

    let datasets: Vec<PreferenceDataset> = manifest
        .sources
        .iter()
        .map(|source| {
            io::load_preferences(manifest.resolve(&base, &source.dataset), &world, &source.id)
                .map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;

    let outcomes: Vec<(String, usize, Outcome)> = manifest
        .sources
        .par_iter()
        .zip(datasets.par_iter())
        .map(|(source, data)| {
            let policy_path = policies_dir.join(format!("{}.json", source.id));
            let outcome = if data.is_empty() {
                // dummy source: its aligned policy is the reference itself
                match io::save_policy(&policy_path, &reference) {
                    Ok(()) => Outcome::EmptyReference,
                    Err(e) => Outcome::Failed(e.to_string()),
                }
            } else if !force && policy_path.exists() {
                Outcome::Reused
            } else {
                match dpo_fit_with_trace(&reference, data, &manifest.alignment) {
                    Ok((policy, trace)) => match io::save_policy(&policy_path, &policy) {
                        Ok(()) => Outcome::Fitted {
                            iterations: trace.iterations,
                            grad_norm: trace.grad_norm,
                        },
                        Err(e) => Outcome::Failed(e.to_string()),
                    },
                    Err(e) => Outcome::Failed(e.to_string()),
                }
            };
            (source.id.clone(), data.len(), outcome)
        })
        .collect();

    let mut diagnostics = FitDiagnostics {
        fits_performed: 0,
        sources: Vec::with_capacity(outcomes.len()),
    };
    let mut failures = Vec::new();
    for (id, pairs, outcome) in outcomes {
        let entry = match outcome {
            Outcome::Fitted {
                iterations,
                grad_norm,
            } => {
                diagnostics.fits_performed += 1;
                println!("{id}: fitted in {iterations} iterations (grad norm {grad_norm:.2e})");
                SourceFit {
                    id,
                    status: "fitted".into(),
                    pairs: Some(pairs),
                    iterations: Some(iterations),
                    grad_norm: Some(grad_norm),
                    error: None,
                }
            }
            Outcome::Reused => {
                println!("{id}: reusing existing policy (pass --force to refit)");
                SourceFit {
                    id,
                    status: "reused".into(),
                    pairs: Some(pairs),
                    iterations: None,
                    grad_norm: None,
                    error: None,
                }
            }
            Outcome::EmptyReference => {
                println!("{id}: empty dataset, policy set to the reference");
                SourceFit {
                    id,
                    status: "empty_reference".into(),
                    pairs: Some(pairs),
                    iterations: None,
                    grad_norm: None,
                    error: None,
                }
            }
            Outcome::Failed(message) => {
                eprintln!("{id}: FAILED: {message}");
                failures.push(id.clone());
                SourceFit {
                    id,
                    status: "failed".into(),
                    pairs: Some(pairs),
                    iterations: None,
                    grad_norm: None,
                    error: Some(message),
                }
            }
        };
        diagnostics.sources.push(entry);
    }
    diagnostics.sources.sort_by(|a, b| a.id.cmp(&b.id));

    io::write_json(out_dir.join("fit_diagnostics.json"), &diagnostics)?;
    println!(
        "performed {} optimizations for {} sources",
        diagnostics.fits_performed,
        diagnostics.sources.len()
    );

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Convergence(format!(
            "fit failed for source(s): {}",
            failures.join(", ")
        )))
    }
}
