//! Influence-function estimators of trial-specific effects and of the
//! cross-trial standardization matrix, keeping per-subject contributions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;
use crate::trial_data::TrialPanel;

/// Estimated effect curve over trials with per-subject contributions.
#[derive(Debug, Clone, Serialize)]
pub struct EffectCurve {
    pub n_subjects: usize,
    pub n_trials: usize,
    pub chi: Vec<f64>,
    /// Uncentered contributions, row-major n x M; zero where ineligible.
    #[serde(skip)]
    pub if_contributions: Vec<f64>,
    /// Eligibility indicators, row-major n x M.
    #[serde(skip)]
    pub eligible: Vec<bool>,
    pub eligible_fraction: Vec<f64>,
    pub se: Vec<f64>,
    /// No eligible subjects at the trial.
    pub degenerate: Vec<bool>,
    /// Eligible subjects present but one arm empty.
    pub one_arm_empty: Vec<bool>,
}

impl EffectCurve {
    pub fn contribution(&self, i: usize, m: usize) -> f64 {
        self.if_contributions[i * self.n_trials + m - 1]
    }

    pub fn is_eligible(&self, i: usize, m: usize) -> bool {
        self.eligible[i * self.n_trials + m - 1]
    }

    /// Centered contribution 1(E_m) / P_n(E_m) * (chi_dagger - chi_m).
    pub fn centered(&self, i: usize, m: usize) -> f64 {
        if !self.is_eligible(i, m) {
            return 0.0;
        }
        self.contribution(i, m) - self.chi[m - 1] / self.eligible_fraction[m - 1]
    }

    /// chi_dagger for an eligible subject-trial (the contribution before the
    /// 1 / P_n(E_m) normalization).
    pub fn dagger(&self, i: usize, m: usize) -> f64 {
        self.contribution(i, m) * self.eligible_fraction[m - 1]
    }

    /// Subset of trials with a finite estimate.
    pub fn usable(&self) -> Vec<bool> {
        self.chi.iter().map(|c| c.is_finite()).collect()
    }
}

/// Cross-trial effects chi_{j,m} with their per-subject contributions.
#[derive(Debug, Clone, Serialize)]
pub struct StandardizationMatrix {
    pub n_subjects: usize,
    pub n_trials: usize,
    /// Row-major M x M; entry (j, m) at (j - 1) * M + (m - 1).
    pub s_hat: Vec<f64>,
    /// Uncentered contributions, row-major n x M^2 with (j, m) columns in row-major order.
    #[serde(skip)]
    pub if_factor: Vec<f64>,
    #[serde(skip)]
    pub eligible: Vec<bool>,
    pub eligible_fraction: Vec<f64>,
    pub se: Vec<f64>,
}

impl StandardizationMatrix {
    pub fn entry(&self, j: usize, m: usize) -> f64 {
        self.s_hat[(j - 1) * self.n_trials + (m - 1)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (1..=self.n_trials).map(|m| self.entry(m, m)).collect()
    }

    fn width(&self) -> usize {
        self.n_trials * self.n_trials
    }

    /// Centered influence factor Phi, row-major n x M^2.  The g-formula part
    /// of chi_{j,m} is centered within the population eligible at j.
    pub fn centered_factor(&self) -> Vec<f64> {
        let mm = self.n_trials;
        let w = self.width();
        let mut phi = self.if_factor.clone();
        for i in 0..self.n_subjects {
            for j in 1..=mm {
                if !self.eligible[i * mm + j - 1] {
                    continue;
                }
                for m in 1..=mm {
                    let col = (j - 1) * mm + m - 1;
                    let s = self.s_hat[col];
                    if s.is_finite() {
                        phi[i * w + col] -= s / self.eligible_fraction[j - 1];
                    }
                }
            }
        }
        for col in 0..w {
            if !self.s_hat[col].is_finite() {
                for i in 0..self.n_subjects {
                    phi[i * w + col] = 0.0;
                }
            }
        }
        phi
    }
}

fn check_fit(panel: &TrialPanel, fit: &NuisanceFit) -> Result<()> {
    let rows: usize = panel.eligible_counts().iter().sum();
    if fit.n_subjects != panel.n_subjects() || fit.n_trials != panel.n_trials() || fit.len() != rows {
        return Err(Error::InvalidInput("nuisance fit does not cover this panel".into()));
    }
    Ok(())
}

fn arm_coverage(fit: &NuisanceFit) -> Vec<[usize; 2]> {
    let mut counts = vec![[0usize; 2]; fit.n_trials];
    for r in 0..fit.len() {
        counts[fit.trial[r] - 1][fit.treatment[r] as usize] += 1;
    }
    counts
}

fn column_means(values: &[f64], n: usize, width: usize) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    for i in 0..n {
        for (s, v) in sums.iter_mut().zip(&values[i * width..(i + 1) * width]) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / n as f64).collect()
}

/// Residual term A/pi - (1-A)/(1-pi) times (Y - mu(A)) at the row's own trial.
fn residual_term(fit: &NuisanceFit, r: usize) -> f64 {
    let mu_a = if fit.treatment[r] == 1 { fit.mu1[r] } else { fit.mu0[r] };
    fit.ipw[r] * (fit.outcome[r] - mu_a)
}

pub fn estimate_chi(panel: &TrialPanel, fit: &NuisanceFit) -> Result<EffectCurve> {
    check_fit(panel, fit)?;
    let (n, mm) = (fit.n_subjects, fit.n_trials);
    let frac = &fit.eligible_fraction;
    let mut contrib = vec![0.0; n * mm];
    let mut eligible = vec![false; n * mm];
    for r in 0..fit.len() {
        let (i, m) = (fit.subject[r], fit.trial[r]);
        let p = frac[m - 1];
        // same arithmetic as the diagonal of the cross-trial estimator
        contrib[i * mm + m - 1] = (fit.mu1[r] - fit.mu0[r]) / p + residual_term(fit, r) / p;
        eligible[i * mm + m - 1] = true;
    }
    let coverage = arm_coverage(fit);
    let degenerate: Vec<bool> = frac.iter().map(|&p| p == 0.0).collect();
    let one_arm_empty: Vec<bool> =
        coverage.iter().zip(&degenerate).map(|(c, &d)| !d && (c[0] == 0 || c[1] == 0)).collect();
    for m in 1..=mm {
        if degenerate[m - 1] {
            tracing::warn!(trial = m, "no eligible subjects; estimate is NaN");
        } else if one_arm_empty[m - 1] {
            tracing::warn!(trial = m, "one treatment arm is empty; residual term dropped for that arm");
        }
    }
    let mut chi = column_means(&contrib, n, mm);
    for m in 0..mm {
        if degenerate[m] {
            chi[m] = f64::NAN;
        }
    }
    let mut curve = EffectCurve {
        n_subjects: n,
        n_trials: mm,
        chi,
        if_contributions: contrib,
        eligible,
        eligible_fraction: frac.clone(),
        se: Vec::new(),
        degenerate,
        one_arm_empty,
    };
    curve.se = plugin_variance(&curve).into_iter().map(f64::sqrt).collect();
    Ok(curve)
}

/// Per-trial sampling variance: mean squared centered contribution over n.
pub fn plugin_variance(curve: &EffectCurve) -> Vec<f64> {
    let n = curve.n_subjects as f64;
    (1..=curve.n_trials)
        .map(|m| {
            if !curve.chi[m - 1].is_finite() {
                return f64::NAN;
            }
            let ss: f64 = (0..curve.n_subjects).map(|i| curve.centered(i, m).powi(2)).sum();
            ss / n / n
        })
        .collect()
}

pub fn estimate_cross_trial(panel: &TrialPanel, fit: &NuisanceFit) -> Result<StandardizationMatrix> {
    check_fit(panel, fit)?;
    let probs = fit
        .membership
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("cross-trial effects need the membership model".into()))?;
    if fit.mu1_grid.is_none() {
        return Err(Error::InvalidInput("cross-trial effects need counterfactual outcome predictions".into()));
    }
    let (n, mm) = (fit.n_subjects, fit.n_trials);
    let w = mm * mm;
    let frac = &fit.eligible_fraction;
    let mut factor = vec![0.0; n * w];
    let mut eligible = vec![false; n * mm];
    for r in 0..fit.len() {
        let (i, t) = (fit.subject[r], fit.trial[r]);
        eligible[i * mm + t - 1] = true;
        let row = &mut factor[i * w..(i + 1) * w];
        let p = frac[t - 1];
        // g-formula part: the row's covariates stand for the population at j = t
        for m in 1..=mm {
            row[(t - 1) * mm + m - 1] += (fit.mu_at(r, m, 1) - fit.mu_at(r, m, 0)) / p;
        }
        // residual part: the row's outcome at m = t, transported to each j
        let resid = residual_term(fit, r);
        for j in 1..=mm {
            let xi = if j == t { 1.0 } else { fit.ratio_unchecked(probs, j, t, r) };
            row[(j - 1) * mm + t - 1] += xi * resid / p;
        }
    }
    let mut s_hat = column_means(&factor, n, w);
    for j in 1..=mm {
        for m in 1..=mm {
            if frac[j - 1] == 0.0 || frac[m - 1] == 0.0 {
                s_hat[(j - 1) * mm + m - 1] = f64::NAN;
            }
        }
    }
    let mut s = StandardizationMatrix {
        n_subjects: n,
        n_trials: mm,
        s_hat,
        if_factor: factor,
        eligible,
        eligible_fraction: frac.clone(),
        se: Vec::new(),
    };
    let phi = s.centered_factor();
    let nf = n as f64;
    s.se = (0..w)
        .map(|col| {
            if !s.s_hat[col].is_finite() {
                return f64::NAN;
            }
            let ss: f64 = (0..n).map(|i| phi[i * w + col].powi(2)).sum();
            (ss / nf / nf).sqrt()
        })
        .collect();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::TruncationPolicy;
    use crate::trial_data::{Covariate, CovariateSchema, EligibleRecord};

    fn panel(records: Vec<Option<EligibleRecord>>, n: usize, m: usize) -> TrialPanel {
        let schema = CovariateSchema::new(vec![Covariate::numeric("x")]).unwrap();
        TrialPanel::new(schema, (0..n).map(|i| i.to_string()).collect(), m, records).unwrap()
    }

    fn rec(x: f64, a: u8, y: f64) -> Option<EligibleRecord> {
        Some(EligibleRecord { covariates: vec![x], treatment: a, outcome: y })
    }

    #[test]
    fn zero_residual_identity() {
        // mu(a, L) = a and Y = A, so every residual vanishes
        let recs = vec![rec(0.0, 1, 1.0), rec(1.0, 0, 0.0), rec(2.0, 0, 0.0), rec(3.0, 1, 1.0)];
        let p = panel(recs, 2, 2);
        let fit = NuisanceFit::from_functions(&p, TruncationPolicy::floor_only(0.01), |_, a, _| a as f64, |_, _| 0.5);
        let curve = estimate_chi(&p, &fit).unwrap();
        assert_eq!(curve.chi, vec![1.0, 1.0]);
        assert_eq!(plugin_variance(&curve), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_trial_is_degenerate() {
        let recs = vec![rec(0.0, 1, 1.0), None, rec(1.0, 0, 0.5), None];
        let p = panel(recs, 2, 2);
        let fit = NuisanceFit::from_functions(&p, TruncationPolicy::floor_only(0.01), |_, a, x| a as f64 + x[0], |_, _| 0.5);
        let curve = estimate_chi(&p, &fit).unwrap();
        assert!(curve.degenerate[1]);
        assert!(curve.chi[1].is_nan());
        assert!(curve.chi[0].is_finite());
    }

    #[test]
    fn diagonal_matches_curve_and_centering_is_exact() {
        let mut recs = Vec::new();
        for i in 0..40 {
            for m in 1..=3 {
                let x = ((i * 7 + m * 3) % 11) as f64 / 10.0;
                let a = ((i + m) % 3 == 0) as u8;
                if (i + m) % 5 == 0 {
                    recs.push(None);
                } else {
                    recs.push(rec(x, a, x * x + a as f64 * (0.5 + x) + 0.01 * i as f64));
                }
            }
        }
        let p = panel(recs, 40, 3);
        let mut fit =
            NuisanceFit::from_functions(&p, TruncationPolicy::floor_only(0.01), |m, a, x| x[0] + a as f64 * 0.2 * m as f64, |_, x| 0.3 + 0.2 * x[0]);
        fit.override_membership(&p, |x, out| {
            out[0] = 0.2 + 0.1 * x[0];
            out[1] = 0.3;
            out[2] = 1.0 - out[0] - out[1];
        });
        let curve = estimate_chi(&p, &fit).unwrap();
        let s = estimate_cross_trial(&p, &fit).unwrap();
        for m in 1..=3 {
            assert!((s.entry(m, m) - curve.chi[m - 1]).abs() < 1e-10);
            let mean: f64 = (0..40).map(|i| curve.centered(i, m)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12);
        }
        let phi = s.centered_factor();
        for col in 0..9 {
            let mean: f64 = (0..40).map(|i| phi[i * 9 + col]).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12, "column {col}: {mean}");
        }
    }
}
