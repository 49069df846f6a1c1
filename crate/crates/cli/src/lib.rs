//! Command-line pipeline: generate synthetic preference data, align one
//! policy per source, compose coalition policies training-free, and
//! attribute evaluation rewards to sources with Shapley estimators.

mod fit;
mod generate;
mod manifest;
mod shapley;
mod signature;
mod verify;

pub use fit::{FitDiagnostics, SourceFit};
pub use manifest::{EstimatorSettings, EvalRewardEntry, RunManifest, SourceEntry};
pub use verify::VerifyReport;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prefshap::SampleBudget;

const EXIT_CODE_HELP: &str = "Exit codes:
  0  success
  1  unexpected failure (I/O, internal)
  2  invalid input (bad flags, malformed or missing files)
  3  an optimization did not converge
  4  a verification check failed";

/// Errors carry the process exit code they map to.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Convergence(String),
    Verification(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m)
            | CliError::Convergence(m)
            | CliError::Verification(m)
            | CliError::Other(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl From<prefshap::Error> for CliError {
    fn from(err: prefshap::Error) -> Self {
        use prefshap::Error::*;
        // unwrap oracle wrappers so the underlying failure picks the code
        if let Oracle { coalition, source } = err {
            let inner = CliError::from(*source);
            let text = format!("coalition {coalition:?}: {}", inner.message());
            return match inner {
                CliError::Validation(_) => CliError::Validation(text),
                CliError::Convergence(_) => CliError::Convergence(text),
                CliError::Verification(_) => CliError::Verification(text),
                CliError::Other(_) => CliError::Other(text),
            };
        }
        let text = err.to_string();
        match err {
            InvalidInput(_) | UnknownPrompt(_) | UnknownResponse(_) | UnknownSource(_)
            | SupportViolation(_) | DegenerateSupport { .. } | RankDeficient(_)
            | DimensionMismatch(_) => CliError::Validation(text),
            Convergence { .. } | SequentialStep { .. } => CliError::Convergence(text),
            _ => CliError::Other(text),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "prefshap",
    version,
    about = "Shapley valuation of preference-data sources via policy arithmetic",
    after_help = EXIT_CODE_HELP
)]
pub struct Cli {
    /// Run manifest (written by `gen`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Seed override: world seed for `gen`, estimator seed for `shapley`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel fits and coalition evaluation
    /// (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Recompute outputs even when cached files exist.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic world, per-source preference data, ground-truth
    /// and evaluation rewards, and a run manifest.
    Gen {
        /// Output directory for the generated run.
        #[arg(long)]
        out: PathBuf,
        /// Number of preference-data sources.
        #[arg(long, default_value_t = 4)]
        sources: usize,
        /// Number of prompts in the world.
        #[arg(long, default_value_t = 8)]
        prompts: usize,
        /// Number of responses per prompt.
        #[arg(long, default_value_t = 5)]
        responses: usize,
        /// Preference pairs per source.
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        /// Number of evaluation rewards (axes of the value space).
        #[arg(long, default_value_t = 2)]
        eval_rewards: usize,
        /// Standard deviation of the generated reward tables.
        #[arg(long, default_value_t = 1.0)]
        reward_scale: f64,
    },
    /// Align one policy per data source against the reference.
    Fit,
    /// Estimate per-source Shapley values over the evaluation rewards and
    /// write the result, the utility cache, and the signature CSV.
    Shapley {
        /// Estimator name: exact, mc_permutation (alias: mc), regression.
        #[arg(long)]
        estimator: Option<String>,
        /// Permutation count for the mc_permutation estimator.
        #[arg(long)]
        perms: Option<usize>,
        /// Coalition budget for the regression estimator: "full" or a count.
        #[arg(long)]
        samples: Option<SampleBudget>,
        /// Evaluate utilities from this many sampled generations instead of
        /// the exact expectation.
        #[arg(long)]
        eval_samples: Option<usize>,
    },
    /// Check the composition identity, sequential-fit order invariance, and
    /// implicit-reward recovery for this run.
    Verify {
        /// Build per-source policies from the ground-truth rewards via the
        /// closed form instead of loading fitted policies; the composition
        /// identity is then enforced, not just reported.
        #[arg(long)]
        exact_inputs: bool,
    },
    /// Export the spatial-signature CSV from an existing result file.
    Signature {
        /// Shapley result JSON (default: <output_dir>/shapley.json from the
        /// manifest).
        #[arg(long)]
        result: Option<PathBuf>,
        /// Destination CSV (default: signature.csv next to the result).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn manifest_path(cli: &Cli) -> Result<PathBuf, CliError> {
    cli.manifest
        .clone()
        .ok_or_else(|| CliError::Validation("--manifest is required for this command".into()))
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(jobs) = jobs {
        if jobs == 0 {
            return Err(CliError::Validation("--jobs must be >= 1".into()));
        }
        // ignore the error if a pool is already installed (e.g. in-process reuse)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_jobs(cli.jobs)?;
    match &cli.command {
        Command::Gen {
            out,
            sources,
            prompts,
            responses,
            pairs,
            eval_rewards,
            reward_scale,
        } => generate::cmd_gen(generate::GenArgs {
            out: out.clone(),
            sources: *sources,
            prompts: *prompts,
            responses: *responses,
            pairs: *pairs,
            eval_rewards: *eval_rewards,
            reward_scale: *reward_scale,
            seed: cli.seed.unwrap_or(0),
        }),
        Command::Fit => fit::cmd_fit(&manifest_path(&cli)?, cli.force),
        Command::Shapley {
            estimator,
            perms,
            samples,
            eval_samples,
        } => shapley::cmd_shapley(
            &manifest_path(&cli)?,
            shapley::ShapleyOverrides {
                estimator: estimator.clone(),
                permutations: *perms,
                samples: *samples,
                seed: cli.seed,
                eval_samples: *eval_samples,
            },
            cli.force,
        ),
        Command::Verify { exact_inputs } => {
            verify::cmd_verify(&manifest_path(&cli)?, *exact_inputs)
        }
        Command::Signature { result, output } => signature::cmd_signature(
            cli.manifest.as_deref(),
            result.as_deref(),
            output.as_deref(),
        ),
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
