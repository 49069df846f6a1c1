//! `signature`: re-export the spatial-signature CSV from a result file.

use std::path::{Path, PathBuf};

use prefshap::{io, spatial_signature};

use crate::manifest::RunManifest;
use crate::CliError;

pub fn cmd_signature(
    manifest: Option<&Path>,
    result: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let result_path: PathBuf = match (result, manifest) {
        (Some(path), _) => path.to_path_buf(),
        (None, Some(manifest_path)) => {
            let (manifest, base) = RunManifest::load(manifest_path)?;
            manifest.output_dir(&base).join("shapley.json")
        }
        (None, None) => {
            return Err(CliError::Validation(
                "pass --result PATH or --manifest PATH".into(),
            ))
        }
    };
    if !result_path.exists() {
        return Err(CliError::Validation(format!(
            "no result file at {}; run `prefshap shapley` first",
            result_path.display()
        )));
    }

    let (result, sources, rewards) = io::load_shapley_result(&result_path)?;
    let signature = spatial_signature(&result, &sources, &rewards)?;
    let out_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| result_path.with_file_name("signature.csv"));
    io::save_signature_csv(&out_path, &signature)?;

    println!("source,{}", rewards.join(","));
    for row in &signature.rows {
        let coords: Vec<String> = row.values.iter().map(|v| format!("{v:+.6}")).collect();
        println!("{},{}", row.source, coords.join(","));
    }
    if let Some((lo, hi)) = signature.diagonal_span() {
        println!("agreement diagonal y=x spans [{lo:.6}, {hi:.6}]");
    }
    println!("wrote {}", out_path.display());
    Ok(())
}
