//! Artifact writers.  Every numeric cell is either a finite number or the
//! string `NA`; JSON documents use the same token in place of null.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::decomposition::{BootstrapTest, ThetaSummary};
use crate::error::Result;
use crate::estimators::{EffectCurve, StandardizationMatrix};
use crate::projection::MsmFit;
use crate::selection::SelectionResult;

pub const NA: &str = "NA";

/// CSV cell for a real number.
pub fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        NA.to_string()
    }
}

/// JSON value for a real number.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(NA)
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

fn matrix(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| nums(r)).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `j,m,estimate,se` with j = m.
pub fn write_effect_curve(path: &Path, curve: &EffectCurve) -> Result<()> {
    write_rows(
        path,
        &["j", "m", "estimate", "se"],
        (0..curve.n_trials).map(|k| {
            let m = (k + 1).to_string();
            vec![m.clone(), m, cell(curve.chi[k]), cell(curve.se[k])]
        }),
    )
}

pub fn write_standardization(path: &Path, s: &StandardizationMatrix) -> Result<()> {
    let mm = s.n_trials;
    write_rows(
        path,
        &["j", "m", "estimate", "se"],
        (0..mm * mm).map(|k| {
            vec![(k / mm + 1).to_string(), (k % mm + 1).to_string(), cell(s.s_hat[k]), cell(s.se[k])]
        }),
    )
}

pub fn effect_curve_json(curve: &EffectCurve) -> Value {
    json!({
        "n_subjects": curve.n_subjects,
        "n_trials": curve.n_trials,
        "estimate": nums(&curve.chi),
        "se": nums(&curve.se),
        "eligible_fraction": nums(&curve.eligible_fraction),
        "degenerate": curve.degenerate,
        "one_arm_empty": curve.one_arm_empty,
    })
}

pub fn msm_fit_json(fit: &MsmFit) -> Value {
    json!({
        "name": fit.name,
        "kind": serde_json::to_value(&fit.kind).unwrap_or(Value::Null),
        "dim": fit.dim,
        "beta": nums(&fit.beta),
        "cov_beta": matrix(&fit.cov_beta),
        "v_hat": matrix(&fit.v_hat),
        "c_hat": matrix(&fit.c_hat),
        "alpha": num(fit.alpha),
        "convergence": {
            "iterations": fit.convergence.iterations,
            "residual_norm": num(fit.convergence.residual_norm),
        },
        "curve": (0..fit.fitted.len()).map(|k| json!({
            "m": k + 1,
            "psi": num(fit.fitted[k]),
            "se": num(fit.fitted_se[k]),
            "lower": num(fit.lower[k]),
            "upper": num(fit.upper[k]),
        })).collect::<Vec<_>>(),
    })
}

/// Plot-ready long table: one row per (candidate, m) with the point estimate
/// alongside the fitted curve and its band.
pub fn write_curves(path: &Path, curve: &EffectCurve, fits: &[MsmFit]) -> Result<()> {
    let rows = fits.iter().flat_map(|f| {
        (0..curve.n_trials).map(move |k| {
            vec![
                f.name.clone(),
                (k + 1).to_string(),
                cell(curve.chi[k]),
                cell(curve.se[k]),
                cell(f.fitted[k]),
                cell(f.lower[k]),
                cell(f.upper[k]),
            ]
        })
    });
    write_rows(path, &["candidate", "m", "chi_hat", "se", "psi_hat", "lo", "hi"], rows)
}

pub fn selection_json(sel: &SelectionResult) -> Value {
    json!({
        "c": num(sel.c),
        "epsilon": num(sel.epsilon),
        "minimizer": sel.candidates[sel.minimizer].name,
        "selected": sel.candidates[sel.selected].name,
        "candidates": sel.candidates.iter().enumerate().map(|(k, c)| json!({
            "name": c.name,
            "dim": c.dim,
            "pseudorisk": num(c.pseudorisk),
            "sd_distance": num(c.sd_distance),
            "selected": k == sel.selected,
        })).collect::<Vec<_>>(),
    })
}

/// Loss table: candidate, pseudorisk, SD distance, selected flag.
pub fn write_selection_table(path: &Path, sel: &SelectionResult) -> Result<()> {
    write_rows(
        path,
        &["candidate", "pseudorisk", "sd_distance", "selected"],
        sel.candidates.iter().enumerate().map(|(k, c)| {
            vec![
                c.name.clone(),
                cell(c.pseudorisk),
                cell(c.sd_distance),
                u8::from(k == sel.selected).to_string(),
            ]
        }),
    )
}

pub fn theta_json(summary: &ThetaSummary, test: Option<&BootstrapTest>, seed: u64) -> Value {
    json!({
        "theta": num(summary.theta),
        "no_variation": summary.no_variation,
        "theta_m": nums(&summary.theta_m),
        "sigma2": nums(&summary.sigma2),
        "gamma2": nums(&summary.gamma2),
        "sigma2_thresholded": nums(&summary.sigma2_thresholded),
        "gamma2_thresholded": nums(&summary.gamma2_thresholded),
        "correction_applied": summary.correction_applied,
        "thresholding": {
            "enabled": summary.thresholding.enabled,
            "d": num(summary.thresholding.d),
            "switch_margin": num(summary.thresholding.switch_margin),
        },
        "test": test.map(|t| json!({
            "replicates": t.replicates,
            "delta": num(t.delta),
            "lower": num(t.lower),
            "upper": num(t.upper),
            "reject": t.reject,
            "seed": seed,
        })).unwrap_or_else(|| json!(NA)),
    })
}

pub fn write_replicates(path: &Path, reps: &[f64]) -> Result<()> {
    write_rows(path, &["b", "theta"], reps.iter().enumerate().map(|(b, t)| vec![(b + 1).to_string(), cell(*t)]))
}

/// Write a table given as header plus string rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(path, header, rows.iter().cloned())
}

/// True if a JSON document holds no null or non-finite number anywhere.
pub fn json_is_clean(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(a) => a.iter().all(json_is_clean),
        Value::Object(o) => o.values().all(json_is_clean),
        _ => true,
    }
}
