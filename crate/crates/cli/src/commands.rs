use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use caltrend_core::export::{self, cell};
use caltrend_core::rng::{derive_indexed, derive_seed};
use caltrend_core::selection::apply_rule;
use caltrend_core::simulation::{synth_pool, CovariatePool, OutcomeModel, Scenario, ScenarioSpec, ShiftRule};
use caltrend_core::trial_data::{ingest_csv, TrialPanel};
use serde_json::{json, Value};

use crate::config::{AnalysisConfig, RunConfig, SimulationGrid};
use crate::pipeline::{run_analysis, write_artifacts};
use crate::report::recommend;

fn load_pool(cfg: &RunConfig) -> anyhow::Result<CovariatePool> {
    match &cfg.data.pool.csv {
        Some(p) => Ok(CovariatePool::from_csv(p)?),
        None => Ok(synth_pool(cfg.data.pool.size, derive_seed(cfg.seed, "pool"))?),
    }
}

fn load_panel(cfg: &RunConfig) -> anyhow::Result<TrialPanel> {
    if let Some(path) = &cfg.data.input {
        let (panel, report) = ingest_csv(path, &cfg.schema())?;
        tracing::info!(
            rows = report.rows_read,
            eligible = report.eligible_rows,
            coerced = report.coerced_rows,
            subjects = panel.n_subjects(),
            trials = panel.n_trials(),
            "panel ingested"
        );
        return Ok(panel);
    }
    let spec = cfg.data.scenario.clone().context("no data source configured")?;
    let pool = load_pool(cfg)?;
    let scenario = Scenario::new(spec, &pool)?;
    Ok(scenario.generate(&pool)?)
}

fn file_entries(dir: &Path, files: &[PathBuf]) -> anyhow::Result<Vec<Value>> {
    files
        .iter()
        .map(|f| {
            let bytes = std::fs::metadata(dir.join(f))?.len();
            Ok(json!({ "file": f.to_string_lossy(), "bytes": bytes }))
        })
        .collect()
}

/// Machine-readable record of a run; the timestamp is its only volatile field.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, threads: usize, extra: Value) -> anyhow::Result<()> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let doc = json!({
        "tool": "caltrend",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "threads": threads,
        "created_unix": created,
        "config": serde_json::to_value(cfg)?,
        "outputs": extra,
    });
    export::write_json(&dir.join("manifest.json"), &doc)?;
    Ok(())
}

pub fn cmd_estimate(cfg: &RunConfig, threads: usize) -> anyhow::Result<Vec<PathBuf>> {
    cfg.validate_estimate()?;
    let panel = load_panel(cfg)?;
    let out = run_analysis(&panel, &cfg.analysis, cfg.seed)?;
    let files = write_artifacts(&cfg.output, &out, &cfg.analysis, cfg.display_percent)?;
    if let Some(r) = &out.recommendation {
        tracing::info!(selected = %r.selected, outcome = ?r.test_outcome, "recommendation: {}", r.action.join("; "));
    }
    let entries = file_entries(&cfg.output, &files)?;
    write_manifest(&cfg.output, "estimate", cfg, threads, json!({ "artifacts": entries }))?;
    Ok(files)
}

/// One replicate of a simulation cell.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    /// Selected candidate name for each c in the grid.
    pub selected: Vec<String>,
    pub theta_m: Vec<f64>,
    pub theta: f64,
    pub reject: Option<bool>,
    pub document: Value,
}

fn scenario_label(shift: ShiftRule, outcome: OutcomeModel) -> String {
    format!("{}_{}", serde_json::to_value(shift).unwrap().as_str().unwrap(), serde_json::to_value(outcome).unwrap().as_str().unwrap())
}

/// The configured c followed by the grid values not equal to it.
fn c_values(analysis: &AnalysisConfig) -> Vec<f64> {
    let mut v = vec![analysis.c];
    v.extend(analysis.c_grid.iter().copied().filter(|c| *c != analysis.c));
    v
}

/// Seed of replicate `r` in the cell (shift, outcome, n).
pub fn replicate_seed(seed: u64, shift: ShiftRule, outcome: OutcomeModel, n: usize, r: usize) -> u64 {
    derive_indexed(derive_seed(seed, &format!("sim/{}/n{n}", scenario_label(shift, outcome))), r as u64)
}

/// Simulate and analyse one replicate; a pure function of its arguments.
#[allow(clippy::too_many_arguments)]
pub fn run_replicate(
    pool: &CovariatePool,
    grid: &SimulationGrid,
    analysis: &AnalysisConfig,
    shift: ShiftRule,
    outcome: OutcomeModel,
    n: usize,
    seed: u64,
    panel_path: Option<&Path>,
) -> anyhow::Result<ReplicateResult> {
    let spec = ScenarioSpec {
        n_trials: grid.n_trials,
        sigma_y: grid.sigma_y,
        coefficients: grid.coefficients.clone(),
        ..ScenarioSpec::new(shift, outcome, grid.n_trials, n, derive_seed(seed, "data"))
    };
    let scenario = Scenario::new(spec, pool)?;
    let panel = scenario.generate(pool)?;
    if let Some(p) = panel_path {
        panel.export_csv(p)?;
    }
    let out = run_analysis(&panel, analysis, derive_seed(seed, "analysis"))?;
    let c_values = c_values(analysis);
    let selected = c_values
        .iter()
        .map(|&c| Ok(out.selection.with_c(c)?.selected_name().to_string()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let theta_m = out.theta.as_ref().map(|t| t.theta_m.clone()).unwrap_or_default();
    let theta = out.theta.as_ref().map_or(f64::NAN, |t| t.theta);
    let reject = out.test.as_ref().map(|t| t.reject);
    let document = json!({
        "shift": shift,
        "outcome": outcome,
        "n": n,
        "seed": seed,
        "chi_hat": export::nums(&out.curve.chi),
        "se": export::nums(&out.curve.se),
        "truth_chi": export::nums(&scenario.truth_chi()),
        "selection": export::selection_json(&out.selection),
        "selected_by_c": c_values.iter().zip(&selected).map(|(c, s)| json!({"c": c, "selected": s})).collect::<Vec<_>>(),
        "theta": export::num(theta),
        "theta_m": export::nums(&theta_m),
        "test": out.test.as_ref().map(|t| json!({
            "lower": export::num(t.lower), "upper": export::num(t.upper), "reject": t.reject,
        })).unwrap_or_else(|| json!(export::NA)),
    });
    Ok(ReplicateResult { selected, theta_m, theta, reject, document })
}

#[derive(Default)]
struct CellSummary {
    ok: usize,
    failed: usize,
    counts: Vec<BTreeMap<String, usize>>,
    theta_sum: Vec<f64>,
    theta_count: Vec<usize>,
    rejections: usize,
    tested: usize,
}

pub fn cmd_simulate(cfg: &RunConfig, threads: usize) -> anyhow::Result<Vec<PathBuf>> {
    cfg.analysis.validate()?;
    let grid = cfg.simulation.clone().unwrap_or_default();
    if grid.replicates == 0 || grid.n.is_empty() || grid.shifts.is_empty() || grid.outcomes.is_empty() {
        bail!("the simulation grid is empty");
    }
    let pool = load_pool(cfg)?;
    let dir = &cfg.output;
    let rep_dir = dir.join("replicates");
    std::fs::create_dir_all(&rep_dir).with_context(|| format!("creating {}", rep_dir.display()))?;
    let c_values = c_values(&cfg.analysis);

    let mut selection_rows = Vec::new();
    let mut theta_rows = Vec::new();
    let mut rejection_rows = Vec::new();
    let mut manifest_reps = Vec::new();
    for &shift in &grid.shifts {
        for &outcome in &grid.outcomes {
            let label = scenario_label(shift, outcome);
            let truth_spec = ScenarioSpec {
                sigma_y: grid.sigma_y,
                coefficients: grid.coefficients.clone(),
                ..ScenarioSpec::new(shift, outcome, grid.n_trials, 1, 0)
            };
            let truth = Scenario::new(truth_spec, &pool)?;
            let truth_theta = truth.truth_theta_m();
            for &n in &grid.n {
                let mut cell_sum = CellSummary {
                    counts: vec![BTreeMap::new(); c_values.len()],
                    theta_sum: vec![0.0; grid.n_trials],
                    theta_count: vec![0; grid.n_trials],
                    ..CellSummary::default()
                };
                for r in 0..grid.replicates {
                    let seed = replicate_seed(cfg.seed, shift, outcome, n, r);
                    let stem = format!("{label}_n{n}_r{r:04}");
                    let panel_path = grid.write_panels.then(|| rep_dir.join(format!("{stem}.csv")));
                    tracing::info!(scenario = %label, n, replicate = r, "replicate start");
                    match run_replicate(&pool, &grid, &cfg.analysis, shift, outcome, n, seed, panel_path.as_deref()) {
                        Ok(res) => {
                            export::write_json(&rep_dir.join(format!("{stem}.json")), &res.document)?;
                            cell_sum.ok += 1;
                            for (k, s) in res.selected.iter().enumerate() {
                                *cell_sum.counts[k].entry(s.clone()).or_default() += 1;
                            }
                            for (m, t) in res.theta_m.iter().enumerate() {
                                if t.is_finite() {
                                    cell_sum.theta_sum[m] += t;
                                    cell_sum.theta_count[m] += 1;
                                }
                            }
                            if let Some(rej) = res.reject {
                                cell_sum.tested += 1;
                                cell_sum.rejections += rej as usize;
                            }
                            manifest_reps.push(json!({
                                "scenario": label, "n": n, "replicate": r, "seed": seed,
                                "file": format!("replicates/{stem}.json"), "status": "ok",
                            }));
                        }
                        Err(e) => {
                            tracing::warn!(scenario = %label, n, replicate = r, error = %format!("{e:#}"), "replicate failed");
                            cell_sum.failed += 1;
                            manifest_reps.push(json!({
                                "scenario": label, "n": n, "replicate": r, "seed": seed,
                                "status": "failed", "error": format!("{e:#}"),
                            }));
                        }
                    }
                }
                let number = outcome.number();
                let head = |extra: Vec<String>| {
                    let mut row = vec![number.to_string(), label.clone(), n.to_string()];
                    row.extend(extra);
                    row
                };
                let names: Vec<String> =
                    cfg.analysis.candidates_for(grid.n_trials).into_iter().map(|c| c.name).collect();
                for (k, c) in c_values.iter().enumerate() {
                    for name in &names {
                        let count = cell_sum.counts[k].get(name).copied().unwrap_or(0);
                        let freq = if cell_sum.ok > 0 { count as f64 / cell_sum.ok as f64 } else { f64::NAN };
                        selection_rows.push(head(vec![
                            cell(*c),
                            name.clone(),
                            count.to_string(),
                            cell(freq),
                            cell_sum.ok.to_string(),
                            cell_sum.failed.to_string(),
                        ]));
                    }
                }
                for m in 0..grid.n_trials {
                    let mean = cell_sum.theta_sum[m] / cell_sum.theta_count[m] as f64;
                    theta_rows.push(head(vec![
                        (m + 1).to_string(),
                        cell(mean),
                        cell(truth_theta[m]),
                        cell_sum.theta_count[m].to_string(),
                    ]));
                }
                let rate = if cell_sum.tested > 0 { cell_sum.rejections as f64 / cell_sum.tested as f64 } else { f64::NAN };
                rejection_rows.push(head(vec![
                    cell(cfg.analysis.delta),
                    cell_sum.rejections.to_string(),
                    cell(rate),
                    cell_sum.tested.to_string(),
                    cell_sum.failed.to_string(),
                ]));
            }
        }
    }
    let key = ["scenario", "label", "n"];
    let with = |extra: &[&'static str]| key.iter().chain(extra).copied().collect::<Vec<&str>>();
    export::write_table(
        &dir.join("selection_frequency.csv"),
        &with(&["c", "candidate", "count", "frequency", "replicates_ok", "replicates_failed"]),
        &selection_rows,
    )?;
    export::write_table(&dir.join("theta_curves.csv"), &with(&["m", "mean_theta_m", "truth_theta_m", "replicates"]), &theta_rows)?;
    export::write_table(
        &dir.join("rejection_rates.csv"),
        &with(&["delta", "rejections", "rejection_rate", "replicates_tested", "replicates_failed"]),
        &rejection_rows,
    )?;
    let files: Vec<PathBuf> =
        ["selection_frequency.csv", "theta_curves.csv", "rejection_rates.csv"].iter().map(PathBuf::from).collect();
    let entries = file_entries(dir, &files)?;
    write_manifest(dir, "simulate", cfg, threads, json!({ "artifacts": entries, "replicates": manifest_reps }))?;
    Ok(files)
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn as_f64(v: &Value, what: &str) -> anyhow::Result<f64> {
    match v {
        Value::Number(n) => Ok(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) if s == export::NA => Ok(f64::NAN),
        _ => bail!("{what} is not a number"),
    }
}

/// Recompute the reporting decision from saved selection and theta artifacts,
/// optionally with a different c or delta.
pub fn cmd_recommend(dir: &Path, c: Option<f64>, delta: Option<f64>) -> anyhow::Result<Value> {
    let sel = read_json(&dir.join("selection.json"))?;
    let theta = read_json(&dir.join("theta.json"))?;
    let candidates = sel["candidates"].as_array().context("selection.json lacks candidates")?;
    let names: Vec<String> = candidates.iter().map(|c| c["name"].as_str().unwrap_or_default().to_string()).collect();
    let dims: Vec<usize> = candidates.iter().map(|c| c["dim"].as_u64().unwrap_or(0) as usize).collect();
    let risks = candidates
        .iter()
        .map(|c| as_f64(&c["pseudorisk"], "pseudorisk"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let c = match c {
        Some(c) => c,
        None => as_f64(&sel["c"], "c")?,
    };
    let epsilon = as_f64(&sel["epsilon"], "epsilon")?;
    let (_, selected) = apply_rule(&risks, &dims, epsilon, c)?;
    let test = &theta["test"];
    if !test.is_object() {
        bail!("theta.json holds no bootstrap test; rerun estimate with the decomposition enabled");
    }
    let delta = match delta {
        Some(d) => d,
        None => as_f64(&test["delta"], "delta")?,
    };
    if !(delta > 0.0 && delta < 0.5) {
        bail!("delta must lie in (0, 0.5), got {delta}");
    }
    let lower = as_f64(&test["lower"], "lower")?;
    let upper = as_f64(&test["upper"], "upper")?;
    let r = recommend(&names[selected], dims[selected] == 1, lower, upper, delta);
    Ok(json!({
        "c": export::num(c),
        "selected": r.selected,
        "constant_selected": r.constant_selected,
        "test_outcome": r.test_outcome,
        "theta_interval": [export::num(lower), export::num(upper)],
        "delta": export::num(delta),
        "reason": r.reason,
        "action": r.action,
    }))
}
