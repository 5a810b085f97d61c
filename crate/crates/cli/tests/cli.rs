use std::path::Path;
use std::process::{Command, Output};

use caltrend_cli::commands::{cmd_recommend, cmd_simulate};
use caltrend_cli::config::RunConfig;
use serde_json::Value;

fn caltrend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caltrend"))
        .args(args)
        .env("CALTREND_LOG", "warn")
        .output()
        .expect("run caltrend")
}

fn small_run(dir: &Path) -> String {
    format!(
        r#"
seed = 3
output = "{}"

[data.scenario]
shift = "flexible"
outcome = "spline_effect_mod"
n_trials = 8
n_subjects = 2000
seed = 4

[data.pool]
size = 2000

[analysis]
bootstrap = 300

[analysis.learners.outcome]
family = "linear"
trial_as_factor = true

[analysis.learners.propensity]
family = "logistic"

[analysis.learners.membership]
family = "logistic"
"#,
        dir.join("out").display()
    )
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn estimate_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, small_run(tmp.path())).unwrap();
    let out = caltrend(&["estimate", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    for f in [
        "effect_curve.csv",
        "msm_fits.json",
        "curves.csv",
        "selection.json",
        "selection.csv",
        "standardization.csv",
        "theta.json",
        "recommendation.json",
        "manifest.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let curve = std::fs::read_to_string(dir.join("effect_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 9);
    assert!(curve.starts_with("j,m,estimate,se"));
    let s = std::fs::read_to_string(dir.join("standardization.csv")).unwrap();
    assert_eq!(s.lines().count(), 1 + 64);
    let theta = read_json(&dir.join("theta.json"));
    let t = theta["theta"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&t));
    let rec = read_json(&dir.join("recommendation.json"));
    assert!(rec["action"].as_array().is_some_and(|a| !a.is_empty()));

    let again = caltrend(&["recommend", "--output", dir.to_str().unwrap(), "--c", "0"]);
    assert!(again.status.success());
    let doc: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(doc["c"].as_f64(), Some(0.0));
}

#[test]
fn recommendation_rule_over_c_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&small_run(tmp.path()), Path::new("run.toml")).unwrap();
    caltrend_cli::commands::cmd_estimate(&cfg, 1).unwrap();
    let sel = read_json(&cfg.output.join("selection.json"));
    let dims: Vec<u64> = sel["candidates"].as_array().unwrap().iter().map(|c| c["dim"].as_u64().unwrap()).collect();
    let name_dim = |name: &str| {
        let k = sel["candidates"].as_array().unwrap().iter().position(|c| c["name"] == name).unwrap();
        dims[k]
    };
    let mut last = u64::MAX;
    for c in [0.0, 0.25, 0.5, 1.0, 4.0] {
        let doc = cmd_recommend(&cfg.output, Some(c), None).unwrap();
        let dim = name_dim(doc["selected"].as_str().unwrap());
        assert!(dim <= last, "c = {c} selected a richer model");
        last = dim;
    }
    assert!(cmd_recommend(&cfg.output, None, Some(0.7)).is_err());
}

#[test]
fn config_errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[analysis]\nc = 0.25\nbogus = 1\n").unwrap();
    let out = caltrend(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    std::fs::write(&cfg, "[data]\ninput = \"missing.csv\"\n").unwrap();
    let out = caltrend(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = caltrend(&["estimate", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn template_is_a_valid_config() {
    let out = caltrend(&["export-config-template"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::parse(&text, Path::new("t.toml")).unwrap();
    assert_eq!(cfg, RunConfig::template());
    assert!(cfg.validate_estimate().is_ok());
}

fn sim_config(dir: &Path) -> RunConfig {
    let text = format!(
        r#"
seed = 9
output = "{}"

[data.pool]
size = 1500

[analysis]
bootstrap = 200
c_grid = [0.0, 1.0]

[analysis.learners.outcome]
family = "linear"
trial_as_factor = true

[analysis.learners.propensity]
family = "logistic"

[analysis.learners.membership]
family = "logistic"

[simulation]
shifts = ["none", "linear"]
outcomes = ["constant", "linear_effect_mod"]
n = [800]
replicates = 2
n_trials = 6
"#,
        dir.display()
    );
    RunConfig::parse(&text, Path::new("sim.toml")).unwrap()
}

#[test]
fn simulate_grid_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let files = cmd_simulate(&sim_config(&a), 1).unwrap();
    cmd_simulate(&sim_config(&b), 1).unwrap();
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
    let reps: Vec<_> = std::fs::read_dir(a.join("replicates")).unwrap().collect();
    assert_eq!(reps.len(), 2 * 2 * 2);

    let rates = std::fs::read_to_string(a.join("rejection_rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 1 + 4);
    let freq = std::fs::read_to_string(a.join("selection_frequency.csv")).unwrap();
    // four cells, c in {0.25, 0, 1}, every default candidate
    let candidates = caltrend_core::projection::default_candidates(6).len();
    assert_eq!(freq.lines().count(), 1 + 4 * 3 * candidates);
    let theta = std::fs::read_to_string(a.join("theta_curves.csv")).unwrap();
    assert_eq!(theta.lines().count(), 1 + 4 * 6);

    let manifest = read_json(&a.join("manifest.json"));
    let listed = manifest["outputs"]["replicates"].as_array().unwrap();
    assert_eq!(listed.len(), 8);
    assert!(listed.iter().all(|r| r["status"] == "ok"));
}
