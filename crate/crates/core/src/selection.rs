//! Candidate MSM selection by an influence-function pseudorisk evaluated
//! under two-stage sample splitting, followed by the c * epsilon simplicity rule.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{estimate_chi, EffectCurve};
use crate::nuisance::{predict_crossfit, CrossFitOptions, NuisanceSpecs, TruncationPolicy};
use crate::projection::{fit_projection, CandidateSpec, MsmBasis, MsmFit, TrialWeights};
use crate::rng;
use crate::trial_data::{split_subjects, TrialPanel};

/// P_n[ sum_m w(m) { psi(m)^2 - 2 psi(m) chi_dot_m } ] for uncentered
/// contributions `ifs` (row-major n x M).  Trials whose column contains a
/// non-finite value are skipped.
pub fn pseudorisk(ifs: &[f64], n: usize, psi: &[f64], weights: &[f64]) -> Result<f64> {
    let mm = psi.len();
    if weights.len() != mm || ifs.len() != n * mm || n == 0 {
        return Err(Error::InvalidInput(format!(
            "pseudorisk dimensions disagree: {} contributions, n = {n}, {} psi values, {} weights",
            ifs.len(),
            mm,
            weights.len()
        )));
    }
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("pseudorisk needs finite psi values".into()));
    }
    let mut total = 0.0;
    for m in 0..mm {
        let mean = (0..n).map(|i| ifs[i * mm + m]).sum::<f64>() / n as f64;
        if mean.is_finite() {
            total += weights[m] * (psi[m] * psi[m] - 2.0 * psi[m] * mean);
        }
    }
    Ok(total)
}

/// Pseudorisk of a fitted curve against an effect curve's contributions.
pub fn curve_pseudorisk(curve: &EffectCurve, psi: &[f64], weights: &TrialWeights) -> Result<f64> {
    let mut ifs = curve.if_contributions.clone();
    for m in 0..curve.n_trials {
        if !curve.chi[m].is_finite() {
            for i in 0..curve.n_subjects {
                ifs[i * curve.n_trials + m] = f64::NAN;
            }
        }
    }
    pseudorisk(&ifs, curve.n_subjects, psi, &weights.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateResult {
    pub name: String,
    pub dim: usize,
    /// Averaged over the two split directions; NaN if the candidate failed.
    pub pseudorisk: f64,
    /// (pseudorisk - minimum) / epsilon.
    pub sd_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    pub candidates: Vec<CandidateResult>,
    pub minimizer: usize,
    pub epsilon: f64,
    pub c: f64,
    pub selected: usize,
}

impl SelectionResult {
    /// Re-apply the simplicity rule with another constant.
    pub fn with_c(&self, c: f64) -> Result<SelectionResult> {
        let risks: Vec<f64> = self.candidates.iter().map(|k| k.pseudorisk).collect();
        let dims: Vec<usize> = self.candidates.iter().map(|k| k.dim).collect();
        let (minimizer, selected) = apply_rule(&risks, &dims, self.epsilon, c)?;
        Ok(SelectionResult { minimizer, selected, c, ..self.clone() })
    }

    pub fn selected_name(&self) -> &str {
        &self.candidates[self.selected].name
    }
}

/// Index of the minimizer and of the simplest candidate within c * epsilon of
/// it; complexity is dimension, ties broken by declaration order.
pub fn apply_rule(risks: &[f64], dims: &[usize], epsilon: f64, c: f64) -> Result<(usize, usize)> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidSpec(format!("c must be finite and nonnegative, got {c}")));
    }
    let minimizer = (0..risks.len())
        .filter(|&k| risks[k].is_finite())
        .min_by(|&a, &b| risks[a].total_cmp(&risks[b]))
        .ok_or_else(|| Error::Fit { model: "model selection".into(), reason: "every candidate failed".into() })?;
    let selected = (0..risks.len())
        .filter(|&k| risks[k].is_finite() && (risks[k] - risks[minimizer]).abs() <= c * epsilon)
        .min_by_key(|&k| (dims[k], k))
        .unwrap_or(minimizer);
    Ok((minimizer, selected))
}

/// Estimate the curve on one half with its own internal cross-fitting.
fn half_curve(panel: &TrialPanel, specs: &NuisanceSpecs, policy: &TruncationPolicy, seed: u64) -> Result<EffectCurve> {
    let fit = predict_crossfit(panel, specs, policy, CrossFitOptions::DIAGONAL, seed)?;
    estimate_chi(panel, &fit)
}

#[allow(clippy::too_many_arguments)]
pub fn crossfit_selection(
    panel: &TrialPanel,
    candidates: &[CandidateSpec],
    specs: &NuisanceSpecs,
    policy: &TruncationPolicy,
    weights: &TrialWeights,
    c: f64,
    alpha: f64,
    seed: u64,
) -> Result<SelectionResult> {
    if candidates.len() < 2 {
        return Err(Error::InvalidSpec("model selection needs at least two candidates".into()));
    }
    if panel.n_subjects() < 4 {
        return Err(Error::InvalidInput("model selection needs at least 4 subjects".into()));
    }
    weights.validate(panel.n_trials())?;
    let bases: Vec<MsmBasis> =
        candidates.iter().map(|c| MsmBasis::new(c, panel.n_trials())).collect::<Result<_>>()?;
    let dims: Vec<usize> = bases.iter().map(MsmBasis::dim).collect();
    if dims.iter().all(|d| *d == dims[0]) {
        return Err(Error::InvalidSpec("candidates must differ in complexity".into()));
    }

    let split = split_subjects(panel.n_subjects(), rng::derive_seed(seed, "selection-split"))?;
    let halves = [panel.subset(&split.members(0))?, panel.subset(&split.members(1))?];
    let (c0, c1) = rayon::join(
        || half_curve(&halves[0], specs, policy, rng::derive_seed(seed, "selection-half0")),
        || half_curve(&halves[1], specs, policy, rng::derive_seed(seed, "selection-half1")),
    );
    let curves = [c0?, c1?];

    // fits[h][k]: candidate k projected on half h
    let fits: Vec<Vec<Option<MsmFit>>> = curves
        .iter()
        .enumerate()
        .map(|(h, curve)| {
            bases
                .iter()
                .map(|b| match fit_projection(curve, b, weights, alpha) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        tracing::warn!(half = h, candidate = %b.name, error = %e, "candidate excluded");
                        None
                    }
                })
                .collect()
        })
        .collect();

    let risks: Vec<f64> = (0..bases.len())
        .map(|k| match (&fits[0][k], &fits[1][k]) {
            (Some(f0), Some(f1)) => {
                let r0 = curve_pseudorisk(&curves[1], &f0.fitted, weights);
                let r1 = curve_pseudorisk(&curves[0], &f1.fitted, weights);
                match (r0, r1) {
                    (Ok(a), Ok(b)) => 0.5 * (a + b),
                    _ => f64::NAN,
                }
            }
            _ => f64::NAN,
        })
        .collect();

    let (minimizer, _) = apply_rule(&risks, &dims, 0.0, 0.0)?;
    let eps2: Vec<f64> = (0..2)
        .map(|h| {
            let hw = weights.effective(&curves[h]);
            fits[h][minimizer].as_ref().unwrap().pooled_variance(&hw)
        })
        .collect();
    let epsilon = (0.5 * (eps2[0] + eps2[1])).sqrt();
    let (minimizer, selected) = apply_rule(&risks, &dims, epsilon, c)?;
    let candidates = bases
        .iter()
        .zip(&risks)
        .map(|(b, &r)| CandidateResult {
            name: b.name.clone(),
            dim: b.dim(),
            pseudorisk: r,
            sd_distance: (r - risks[minimizer]) / epsilon,
        })
        .collect();
    Ok(SelectionResult { candidates, minimizer, epsilon, c, selected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_curve_has_zero_risk() {
        let ifs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(pseudorisk(&ifs, 2, &[0.0; 3], &[1.0; 3]).unwrap(), 0.0);
        assert!(pseudorisk(&ifs, 2, &[0.0; 2], &[1.0; 2]).is_err());
    }

    #[test]
    fn saturated_identity() {
        let ifs = [1.0, 2.0, 3.0, 6.0];
        let chi = [2.0, 4.0];
        let w = [1.0, 0.5];
        let expected = -(1.0 * 4.0 + 0.5 * 16.0);
        assert!((pseudorisk(&ifs, 2, &chi, &w).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rule_prefers_simpler_within_band() {
        let risks = [1.0, 0.9, 0.95, 0.5];
        let dims = [1, 2, 4, 4];
        assert_eq!(apply_rule(&risks, &dims, 1.0, 0.0).unwrap(), (3, 3));
        assert_eq!(apply_rule(&risks, &dims, 1.0, 0.42).unwrap(), (3, 1));
        assert_eq!(apply_rule(&risks, &dims, 1.0, 0.35).unwrap(), (3, 3));
        assert_eq!(apply_rule(&risks, &dims, 1.0, 0.5).unwrap(), (3, 0));
        let dims_tied = [3, 2, 2, 4];
        assert_eq!(apply_rule(&risks, &dims_tied, 1.0, 0.46).unwrap(), (3, 1));
        assert!(apply_rule(&[f64::NAN], &[1], 1.0, 0.0).is_err());
    }
}
