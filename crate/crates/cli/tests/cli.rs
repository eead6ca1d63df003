use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sfocc_cli::manifest::{RunManifest, RunStatus};

fn sfocc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfocc")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    sfocc(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn write_config(dir: &Path, name: &str, v: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn manifest(out: &Path) -> RunManifest {
    RunManifest::read(&out.join("manifest.json")).unwrap()
}

fn tiny_custom() -> serde_json::Value {
    serde_json::json!({
        "custom": {
            "n_species": 2,
            "sites": {"random": {"n": 4}},
            "replicates": 1,
            "occurrence": {"community": {"mean": [0.0], "var": [1.0]}},
            "detection": {"constant": {"p": 0.5}},
            "latent": "none"
        },
        "seed": 3
    })
}

#[test]
fn simulate_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s1.json", serde_json::json!({"scenario": 1, "seed": 2}));
    let out = dir.path().join("s1");
    assert!(run("simulate", &cfg, &out).status.success());
    assert_eq!(data_rows(&out.join("detections.csv")), 10 * 225 * 3);
    assert!(out.join("truth.json").exists());
    assert_eq!(manifest(&out).status, RunStatus::Complete);

    let cfg = write_config(dir.path(), "c.json", tiny_custom());
    let out = dir.path().join("c");
    assert!(run("simulate", &cfg, &out).status.success());
    assert_eq!(data_rows(&out.join("detections.csv")), 8);
}

#[test]
fn fit_predict_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = write_config(d, "sim.json", serde_json::json!({"scenario": 6, "seed": 5}));
    assert!(run("simulate", &sim, &d.join("sim")).status.success());
    let mcmc = serde_json::json!({"n_chains": 2, "n_iterations": 200, "n_burn": 100, "n_thin": 2});
    let fit = write_config(
        d,
        "fit.json",
        serde_json::json!({"data": "sim", "model": {"variant": "sfMsPGOcc", "q": 2}, "mcmc": mcmc}),
    );
    let out = run("fit", &fit, &d.join("fit"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("fit/summary.json")).unwrap()).unwrap();
    let p0 = &summary["parameters"][0];
    for key in ["mean", "sd", "q025", "q50", "q975", "rhat", "ess"] {
        assert!(p0.get(key).is_some(), "missing {key}");
    }
    assert!(data_rows(&d.join("fit/beta.csv")) > 0);

    // prediction at the training sites
    let pred = write_config(
        d,
        "pred.json",
        serde_json::json!({"fit": "fit", "coords": "sim/coords.csv", "occ_covariates": "sim/occ_covariates.csv"}),
    );
    assert!(run("predict", &pred, &d.join("pred")).status.success());
    let rows = data_rows(&d.join("pred/psi.csv")) + data_rows(&d.join("pred/richness.csv"));
    assert_eq!(rows, 225 * (10 + 1));

    // empty grid: error and no outputs
    std::fs::write(d.join("empty.csv"), "site,x,y\n").unwrap();
    let empty = write_config(d, "empty.json", serde_json::json!({"fit": "fit", "coords": "empty.csv"}));
    assert!(!run("predict", &empty, &d.join("pe")).status.success());
    assert!(!d.join("pe/psi.csv").exists() && !d.join("pe/richness.csv").exists());
    assert_eq!(manifest(&d.join("pe")).status, RunStatus::Invalid);

    // single fit, no holdout: WAIC only
    let cmp = write_config(d, "cmp.json", serde_json::json!({"fits": ["fit"], "data": "sim"}));
    assert!(run("compare", &cmp, &d.join("cmp")).status.success());
    let table = std::fs::read_to_string(d.join("cmp/comparison.csv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[3].is_empty() && row[4].is_empty());
    assert!(row[7].is_empty() && row[8].is_empty());

    // other training data: digest mismatch
    let sim2 = write_config(d, "sim2.json", serde_json::json!({"scenario": 6, "seed": 6}));
    assert!(run("simulate", &sim2, &d.join("sim2")).status.success());
    let bad = write_config(d, "bad.json", serde_json::json!({"fits": ["fit"], "data": "sim2"}));
    let out = run("compare", &bad, &d.join("bad"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different data"));

    // holdout comparison against a JSDM populates the other WAIC class
    let sub = write_config(
        d,
        "jsdm.json",
        serde_json::json!({"data": "sim", "model": {"variant": "lfJSDM", "q": 1}, "mcmc": mcmc}),
    );
    assert!(run("fit", &sub, &d.join("jsdm")).status.success());
    let cmp2 = write_config(
        d,
        "cmp2.json",
        serde_json::json!({"fits": ["fit", "jsdm"], "data": "sim", "holdout": "sim2", "references": ["fit"]}),
    );
    let out = run("compare", &cmp2, &d.join("cmp2"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(d.join("cmp2/comparison.csv")).unwrap();
    let jsdm: Vec<&str> = table.lines().nth(2).unwrap().split(',').collect();
    assert!(jsdm[3].is_empty() && !jsdm[4].is_empty() && !jsdm[7].is_empty());
}

#[test]
fn fit_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = write_config(d, "sim.json", tiny_custom());
    assert!(run("simulate", &sim, &d.join("sim")).status.success());

    let burn = write_config(
        d,
        "burn.json",
        serde_json::json!({"data": "sim", "model": {"variant": "msPGOcc"},
                           "mcmc": {"n_iterations": 100, "n_burn": 100}}),
    );
    let out = run("fit", &burn, &d.join("burn"));
    assert!(!out.status.success());
    assert!(!d.join("burn/beta.csv").exists());
    assert_eq!(manifest(&d.join("burn")).status, RunStatus::Invalid);

    let q = write_config(
        d,
        "q.json",
        serde_json::json!({"data": "sim", "model": {"variant": "lfMsPGOcc", "q": 3},
                           "mcmc": {"n_iterations": 100, "n_burn": 50}}),
    );
    let out = run("fit", &q, &d.join("q"));
    assert!(!out.status.success());
    assert!(d.join("q/validation.json").exists());
    assert!(!d.join("q/beta.csv").exists());
}

#[test]
fn simstudy_records_failures_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        "study.json",
        serde_json::json!({"scenarios": [3, 9], "models": ["msPGOcc"], "n_replicates": 2,
                           "mcmc": {"n_chains": 1, "n_iterations": 60, "n_burn": 30}, "seed": 4}),
    );
    let a = run("simstudy", &cfg, &d.join("a"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let failures: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a/failures.json")).unwrap()).unwrap();
    assert_eq!(failures["n_failed"], 2);
    let table = std::fs::read_to_string(d.join("a/coverage_psi.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("3,") && l.len() > 2));
    assert!(d.join("a/runtime.csv").exists());

    let b = sfocc(&[
        "simstudy",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.join("b").to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(b.status.success());
    for f in ["replicates.csv", "coverage_psi.csv", "coverage_beta.csv", "rmse_psi.csv", "rmse_beta.csv"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn rerun_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = write_config(d, "sim.json", tiny_custom());
    assert!(run("simulate", &sim, &d.join("sim")).status.success());
    let fit = write_config(
        d,
        "fit.json",
        serde_json::json!({"data": "sim", "model": {"variant": "msPGOcc"},
                           "mcmc": {"n_chains": 1, "n_iterations": 50, "n_burn": 25}}),
    );
    assert!(run("fit", &fit, &d.join("fit")).status.success());
    let m = d.join("fit/manifest.json");
    let ok = sfocc(&["rerun", "--manifest", m.to_str().unwrap(), "--out", d.join("again").to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let det = d.join("sim/detections.csv");
    let text = std::fs::read_to_string(&det).unwrap();
    std::fs::write(&det, text.replacen(",0\n", ",1\n", 1)).unwrap();
    let bad = sfocc(&["rerun", "--manifest", m.to_str().unwrap(), "--out", d.join("bad").to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("changed"));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "s.json", serde_json::json!({"scenario": 3}));
    let c = cfg.to_str().unwrap();
    assert!(sfocc(&["simulate", "--config", c, "--out", d.join("a").to_str().unwrap(), "--seed", "1"]).status.success());
    assert!(sfocc(&["simulate", "--config", c, "--out", d.join("b").to_str().unwrap(), "--seed", "2"]).status.success());
    assert_ne!(
        std::fs::read(d.join("a/detections.csv")).unwrap(),
        std::fs::read(d.join("b/detections.csv")).unwrap()
    );
    assert_eq!(manifest(&d.join("b")).seed, Some(2));
}
