//! estimate -> project -> select -> decompose -> test, plus artifact writing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use caltrend_core::decomposition::{bootstrap_theta, decompose, test_boundary, BootstrapTest, ThetaSummary};
use caltrend_core::estimators::{estimate_chi, estimate_cross_trial, EffectCurve, StandardizationMatrix};
use caltrend_core::export;
use caltrend_core::nuisance::{predict_crossfit, CrossFitOptions};
use caltrend_core::projection::{fit_projection, MsmBasis, MsmFit};
use caltrend_core::rng::derive_seed;
use caltrend_core::selection::{crossfit_selection, SelectionResult};
use caltrend_core::trial_data::TrialPanel;
use serde_json::{json, Value};

use crate::config::AnalysisConfig;
use crate::report::{format_interval, recommend, Recommendation};

/// A pipeline stage: the module it runs and what to try when it fails.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Nuisance,
    Estimate,
    Project,
    Select,
    Decompose,
    Bootstrap,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Nuisance => "nuisance",
            Stage::Estimate => "estimate",
            Stage::Project => "project",
            Stage::Select => "select",
            Stage::Decompose => "decompose",
            Stage::Bootstrap => "bootstrap",
        }
    }

    pub fn module(self) -> &'static str {
        match self {
            Stage::Nuisance => "nuisance_learners",
            Stage::Estimate => "point_estimators",
            Stage::Project => "msm_projection",
            Stage::Select => "model_selection",
            Stage::Decompose | Stage::Bootstrap => "variance_decomposition",
        }
    }

    pub fn hint(self) -> &'static str {
        match self {
            Stage::Nuisance => "check that both arms occur in the data, or add a ridge penalty to the learners",
            Stage::Estimate => "check eligibility counts per trial and the truncation policy",
            Stage::Project => "drop candidates with more parameters than usable trials, or move spline knots inside (1, M)",
            Stage::Select => "list at least two candidates of different dimension and use at least 4 subjects",
            Stage::Decompose => "the decomposition needs at least two trials with usable cross-trial cells",
            Stage::Bootstrap => "increase the bootstrap count or check delta",
        }
    }
}

pub fn in_stage<T>(stage: Stage, r: caltrend_core::Result<T>) -> anyhow::Result<T> {
    r.with_context(|| format!("stage `{}` ({}) failed; hint: {}", stage.name(), stage.module(), stage.hint()))
}

fn progress(stage: Stage, n_trials: usize, start: Instant) {
    tracing::info!(
        stage = stage.name(),
        trials = %format!("1..{n_trials}"),
        elapsed_ms = start.elapsed().as_millis() as u64,
        "stage complete"
    );
}

pub struct AnalysisOutput {
    pub curve: EffectCurve,
    pub fits: Vec<MsmFit>,
    pub failed_candidates: Vec<(String, String)>,
    pub selection: SelectionResult,
    pub matrix: Option<StandardizationMatrix>,
    pub theta: Option<ThetaSummary>,
    pub replicates: Vec<f64>,
    pub test: Option<BootstrapTest>,
    pub recommendation: Option<Recommendation>,
    pub bootstrap_seed: u64,
}

pub fn run_analysis(panel: &TrialPanel, cfg: &AnalysisConfig, seed: u64) -> anyhow::Result<AnalysisOutput> {
    cfg.validate()?;
    let mm = panel.n_trials();
    let start = Instant::now();
    let options = if cfg.skip_decomposition { CrossFitOptions::DIAGONAL } else { CrossFitOptions::FULL };
    let fit = in_stage(
        Stage::Nuisance,
        predict_crossfit(panel, &cfg.learners, &cfg.truncation, options, derive_seed(seed, "estimate")),
    )?;
    progress(Stage::Nuisance, mm, start);

    let curve = in_stage(Stage::Estimate, estimate_chi(panel, &fit))?;
    let matrix = if cfg.skip_decomposition {
        None
    } else {
        Some(in_stage(Stage::Estimate, estimate_cross_trial(panel, &fit))?)
    };
    drop(fit);
    progress(Stage::Estimate, mm, start);

    let candidates = cfg.candidates_for(mm);
    let weights = cfg.weights_for(mm);
    let bases = in_stage(
        Stage::Project,
        candidates.iter().map(|c| MsmBasis::new(c, mm)).collect::<caltrend_core::Result<Vec<_>>>(),
    )?;
    let mut fits = Vec::new();
    let mut failed_candidates = Vec::new();
    for basis in &bases {
        match fit_projection(&curve, basis, &weights, cfg.alpha) {
            Ok(f) => fits.push(f),
            Err(e) => {
                tracing::warn!(candidate = %basis.name, error = %e, "projection failed");
                failed_candidates.push((basis.name.clone(), e.to_string()));
            }
        }
    }
    progress(Stage::Project, mm, start);

    let selection = in_stage(
        Stage::Select,
        crossfit_selection(
            panel,
            &candidates,
            &cfg.learners,
            &cfg.truncation,
            &weights,
            cfg.c,
            cfg.alpha,
            derive_seed(seed, "selection"),
        ),
    )?;
    progress(Stage::Select, mm, start);

    let bootstrap_seed = derive_seed(seed, "bootstrap");
    let (mut theta, mut replicates, mut test, mut recommendation) = (None, Vec::new(), None, None);
    if let Some(s) = &matrix {
        let summary = in_stage(Stage::Decompose, decompose(s, &cfg.thresholding))?;
        progress(Stage::Decompose, mm, start);
        replicates = in_stage(Stage::Bootstrap, bootstrap_theta(s, cfg.bootstrap, bootstrap_seed, &cfg.thresholding))?;
        let t = in_stage(Stage::Bootstrap, test_boundary(&replicates, cfg.delta))?;
        progress(Stage::Bootstrap, mm, start);
        let sel = &selection.candidates[selection.selected];
        recommendation = Some(recommend(&sel.name, sel.dim == 1, t.lower, t.upper, cfg.delta));
        theta = Some(summary);
        test = Some(t);
    }
    Ok(AnalysisOutput {
        curve,
        fits,
        failed_candidates,
        selection,
        matrix,
        theta,
        replicates,
        test,
        recommendation,
        bootstrap_seed,
    })
}

/// Headline for the selected fit: the common effect, or the first and last trials.
pub fn headline(out: &AnalysisOutput, percent: bool) -> Option<String> {
    let name = out.selection.selected_name();
    let fit = out.fits.iter().find(|f| f.name == name)?;
    let at = |k: usize| format_interval(fit.fitted[k], fit.lower[k], fit.upper[k], percent);
    let last = fit.fitted.len() - 1;
    Some(if fit.dim == 1 {
        format!("common effect {}", at(0))
    } else {
        format!("trial 1: {}; trial {}: {}", at(0), last + 1, at(last))
    })
}

pub fn selection_document(out: &AnalysisOutput, c_grid: &[f64]) -> anyhow::Result<Value> {
    let mut doc = export::selection_json(&out.selection);
    let grid = c_grid
        .iter()
        .map(|&c| {
            let s = out.selection.with_c(c)?;
            Ok(json!({ "c": export::num(c), "selected": s.selected_name() }))
        })
        .collect::<caltrend_core::Result<Vec<_>>>()?;
    doc["c_grid"] = Value::Array(grid);
    Ok(doc)
}

pub fn recommendation_document(out: &AnalysisOutput, percent: bool) -> Value {
    match &out.recommendation {
        Some(r) => json!({
            "selected": r.selected,
            "constant_selected": r.constant_selected,
            "test_outcome": r.test_outcome,
            "theta_interval": [export::num(r.theta_lower), export::num(r.theta_upper)],
            "delta": export::num(r.delta),
            "varying_study_population": r.varying_study_population,
            "varying_fixed_population": r.varying_fixed_population,
            "reason": r.reason,
            "action": r.action,
            "headline": headline(out, percent).unwrap_or_else(|| export::NA.into()),
        }),
        None => json!({
            "selected": out.selection.selected_name(),
            "test_outcome": export::NA,
            "headline": headline(out, percent).unwrap_or_else(|| export::NA.into()),
        }),
    }
}

fn write_checked(path: &Path, doc: &Value) -> anyhow::Result<()> {
    anyhow::ensure!(export::json_is_clean(doc), "{} would contain null values", path.display());
    export::write_json(path, doc)?;
    Ok(())
}

/// Write every artifact of an analysis; returns the file names written.
pub fn write_artifacts(
    dir: &Path,
    out: &AnalysisOutput,
    cfg: &AnalysisConfig,
    percent: bool,
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        written.push(PathBuf::from(name));
        dir.join(name)
    };
    export::write_effect_curve(&put("effect_curve.csv"), &out.curve)?;
    let fits = json!({
        "fits": out.fits.iter().map(export::msm_fit_json).collect::<Vec<_>>(),
        "failed": out.failed_candidates.iter().map(|(n, e)| json!({"name": n, "error": e})).collect::<Vec<_>>(),
    });
    write_checked(&put("msm_fits.json"), &fits)?;
    export::write_curves(&put("curves.csv"), &out.curve, &out.fits)?;
    write_checked(&put("selection.json"), &selection_document(out, &cfg.c_grid)?)?;
    export::write_selection_table(&put("selection.csv"), &out.selection)?;
    if let (Some(s), Some(theta)) = (&out.matrix, &out.theta) {
        export::write_standardization(&put("standardization.csv"), s)?;
        write_checked(&put("theta.json"), &export::theta_json(theta, out.test.as_ref(), out.bootstrap_seed))?;
        if cfg.write_replicates {
            export::write_replicates(&put("theta_replicates.csv"), &out.replicates)?;
        }
    }
    write_checked(&put("recommendation.json"), &recommendation_document(out, percent))?;
    Ok(written)
}
