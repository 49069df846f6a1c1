//! Black-box tests of the command-line surface: determinism, exit codes,
//! caching behavior, and file outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prefshap")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen_run(dir: &Path, pairs: usize, seed: u64) -> PathBuf {
    let out = dir.to_str().unwrap().to_string();
    run_ok(&[
        "gen",
        "--out",
        &out,
        "--sources",
        "4",
        "--prompts",
        "8",
        "--responses",
        "5",
        "--pairs",
        &pairs.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    dir.join("manifest.json")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                acc.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_byte_identical_across_reruns() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    gen_run(a.path(), 50, 7);
    gen_run(b.path(), 50, 7);
    let snap_a = snapshot(a.path());
    let snap_b = snapshot(b.path());
    assert_eq!(snap_a.keys().collect::<Vec<_>>(), snap_b.keys().collect::<Vec<_>>());
    for (key, bytes) in &snap_a {
        assert_eq!(bytes, &snap_b[key], "file {key} differs between runs");
    }
    assert!(snap_a.contains_key("world.json"));
    assert!(snap_a.contains_key("datasets/source_3.jsonl"));
    assert!(snap_a.contains_key("rewards/eval_1.json"));
}

#[test]
fn gen_rejects_degenerate_worlds() {
    let dir = tempdir().unwrap();
    let out = run(&[
        "gen",
        "--out",
        dir.path().to_str().unwrap(),
        "--responses",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "validation failures exit with 2");
}

#[test]
fn fit_reuses_policies_unless_forced() {
    let dir = tempdir().unwrap();
    let manifest = gen_run(dir.path(), 60, 3);
    let manifest = manifest.to_str().unwrap();

    run_ok(&["fit", "--manifest", manifest]);
    let diag = json(&dir.path().join("fit_diagnostics.json"));
    assert_eq!(diag["fits_performed"], 4);

    run_ok(&["fit", "--manifest", manifest]);
    let diag = json(&dir.path().join("fit_diagnostics.json"));
    assert_eq!(diag["fits_performed"], 0);
    for source in diag["sources"].as_array().unwrap() {
        assert_eq!(source["status"], "reused");
    }

    run_ok(&["fit", "--manifest", manifest, "--force"]);
    let diag = json(&dir.path().join("fit_diagnostics.json"));
    assert_eq!(diag["fits_performed"], 4);
}

#[test]
fn fit_skips_empty_sources_with_a_marker() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 40, 5);

    // blank out one dataset
    std::fs::write(dir.path().join("datasets/source_2.jsonl"), "").unwrap();
    run_ok(&["fit", "--manifest", manifest_path.to_str().unwrap()]);

    let diag = json(&dir.path().join("fit_diagnostics.json"));
    assert_eq!(diag["fits_performed"], 3);
    let marker = diag["sources"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["id"] == "source_2")
        .unwrap();
    assert_eq!(marker["status"], "empty_reference");

    let reference = json(&dir.path().join("reference.json"));
    let policy = json(&dir.path().join("policies/source_2.json"));
    assert_eq!(reference["log_probs"], policy["log_probs"]);
}

#[test]
fn fit_convergence_failures_exit_3_but_keep_other_sources() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 40, 9);
    // starve the optimizer so every fit fails
    let mut manifest = json(&manifest_path);
    manifest["alignment"]["max_iters"] = serde_json::json!(1);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();

    let out = run(&["fit", "--manifest", manifest_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let diag = json(&dir.path().join("fit_diagnostics.json"));
    assert_eq!(diag["fits_performed"], 0);
    for source in diag["sources"].as_array().unwrap() {
        assert_eq!(source["status"], "failed");
        assert!(source["error"].as_str().unwrap().contains("convergence"));
    }
}

#[test]
fn shapley_requires_fitted_policies() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 40, 11);
    let out = run(&["shapley", "--manifest", manifest_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prefshap fit"), "error names the fit command: {stderr}");
}

#[test]
fn shapley_mc_is_reproducible_and_reports_stderr() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 60, 13);
    let manifest = manifest_path.to_str().unwrap();
    run_ok(&["fit", "--manifest", manifest]);

    run_ok(&[
        "shapley", "--manifest", manifest, "--estimator", "mc", "--perms", "200", "--seed", "3",
    ]);
    let first = std::fs::read(dir.path().join("shapley.json")).unwrap();
    let parsed = json(&dir.path().join("shapley.json"));
    assert_eq!(parsed["estimator"], "mc_permutation");
    assert_eq!(parsed["seed"], 3);
    assert!(parsed["stderr"].is_array(), "stderr column populated");

    run_ok(&[
        "shapley", "--manifest", manifest, "--estimator", "mc", "--perms", "200", "--seed", "3",
        "--force",
    ]);
    let second = std::fs::read(dir.path().join("shapley.json")).unwrap();
    assert_eq!(first, second, "same seed reproduces the result bytes");
}

#[test]
fn shapley_exact_reports_null_seed_and_stderr() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 60, 17);
    let manifest = manifest_path.to_str().unwrap();
    run_ok(&["fit", "--manifest", manifest]);
    run_ok(&["shapley", "--manifest", manifest, "--estimator", "exact"]);
    let parsed = json(&dir.path().join("shapley.json"));
    assert_eq!(parsed["estimator"], "exact");
    assert!(parsed["seed"].is_null());
    assert!(parsed["stderr"].is_null());
    assert_eq!(parsed["sources"].as_array().unwrap().len(), 4);
    assert_eq!(parsed["rewards"].as_array().unwrap().len(), 2);
}

#[test]
fn regression_full_matches_exact_through_the_cli() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 60, 19);
    let manifest = manifest_path.to_str().unwrap();
    run_ok(&["fit", "--manifest", manifest]);

    run_ok(&["shapley", "--manifest", manifest, "--estimator", "exact"]);
    let exact = json(&dir.path().join("shapley.json"));
    run_ok(&[
        "shapley", "--manifest", manifest, "--estimator", "regression", "--samples", "full",
    ]);
    let regressed = json(&dir.path().join("shapley.json"));

    let exact_values = exact["values"].as_array().unwrap();
    let reg_values = regressed["values"].as_array().unwrap();
    for (row_e, row_r) in exact_values.iter().zip(reg_values.iter()) {
        for (a, b) in row_e
            .as_array()
            .unwrap()
            .iter()
            .zip(row_r.as_array().unwrap())
        {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn unknown_estimator_is_a_validation_error() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 40, 23);
    let manifest = manifest_path.to_str().unwrap();
    run_ok(&["fit", "--manifest", manifest]);
    let out = run(&["shapley", "--manifest", manifest, "--estimator", "banzhaf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("available"));
}

#[test]
fn verify_passes_on_exact_inputs_and_reports_on_fits() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 60, 29);
    let manifest = manifest_path.to_str().unwrap();

    run_ok(&["verify", "--manifest", manifest, "--exact-inputs"]);
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["mode"], "exact_inputs");
    assert!(report["composition"]["max_log_gap"].as_f64().unwrap() <= 1e-9);
    assert!(report["implicit_reward_max_error"].as_f64().unwrap() <= 1e-8);

    run_ok(&["fit", "--manifest", manifest]);
    run_ok(&["verify", "--manifest", manifest]);
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["mode"], "fitted");
    // informative in fitted mode: gap is reported, not enforced
    assert!(report["composition"]["max_tv_gap"].as_f64().unwrap().is_finite());
    assert!(report["sequential"]["order_tv"].as_f64().unwrap().is_finite());
}

#[test]
fn verify_exact_inputs_gate_fails_when_arithmetic_degrades() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 40, 31);
    // beta small enough that score magnitudes swamp f64 around the 1e-9 gate
    let mut manifest = json(&manifest_path);
    manifest["alignment"]["beta"] = serde_json::json!(1e-12);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    let out = run(&[
        "verify",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--exact-inputs",
    ]);
    assert_eq!(out.status.code(), Some(4), "verification failures exit with 4");
}

#[test]
fn signature_command_round_trips_the_result() {
    let dir = tempdir().unwrap();
    let manifest_path = gen_run(dir.path(), 60, 37);
    let manifest = manifest_path.to_str().unwrap();
    run_ok(&["fit", "--manifest", manifest]);
    run_ok(&["shapley", "--manifest", manifest, "--estimator", "exact"]);

    let from_pipeline = std::fs::read(dir.path().join("signature.csv")).unwrap();
    std::fs::remove_file(dir.path().join("signature.csv")).unwrap();
    run_ok(&["signature", "--manifest", manifest]);
    let regenerated = std::fs::read(dir.path().join("signature.csv")).unwrap();
    assert_eq!(from_pipeline, regenerated);

    // explicit --result and --output paths
    let alt = dir.path().join("alt.csv");
    run_ok(&[
        "signature",
        "--result",
        dir.path().join("shapley.json").to_str().unwrap(),
        "--output",
        alt.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&alt).unwrap(), regenerated);
}

#[test]
fn help_documents_exit_codes_and_subcommands() {
    let out = run_ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["gen", "fit", "shapley", "verify", "signature", "Exit codes"] {
        assert!(text.contains(needle), "--help misses {needle}");
    }
}
