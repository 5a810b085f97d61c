//! Row/column variance decomposition of the standardization matrix, the
//! variability ratio theta, its low-rank parametric bootstrap and the
//! delta-margin boundary test.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::StandardizationMatrix;
use crate::nuisance::quantile;
use crate::rng;

/// Settings of the small-difference thresholding correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholding {
    pub enabled: bool,
    /// Differences with |x| <= d are zeroed in the thresholded variances.
    pub d: f64,
    /// The thresholded ratio replaces the raw one when they differ by more than this.
    pub switch_margin: f64,
}

impl Default for Thresholding {
    fn default() -> Self {
        Self { enabled: true, d: 0.005, switch_margin: 0.1 }
    }
}

impl Thresholding {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaSummary {
    pub sigma2: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub sigma2_thresholded: Vec<f64>,
    pub gamma2_thresholded: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub correction_applied: Vec<bool>,
    pub theta: f64,
    /// Every theta_m is undefined because S shows no variation.
    pub no_variation: bool,
    pub thresholding: Thresholding,
}

fn ratio(s: f64, g: f64) -> f64 {
    s / (s + g)
}

/// Decompose a row-major M x M matrix of cross-trial effects.
pub fn decompose_matrix(s: &[f64], mm: usize, thr: &Thresholding) -> Result<ThetaSummary> {
    if mm < 2 {
        return Err(Error::InvalidInput("the decomposition needs at least two trials".into()));
    }
    if s.len() != mm * mm {
        return Err(Error::InvalidInput(format!("expected {} entries, got {}", mm * mm, s.len())));
    }
    let at = |j: usize, m: usize| s[j * mm + m];
    let t = |x: f64| if x.abs() > thr.d { x.abs() } else { 0.0 };
    let mut out = ThetaSummary {
        sigma2: vec![f64::NAN; mm],
        gamma2: vec![f64::NAN; mm],
        sigma2_thresholded: vec![f64::NAN; mm],
        gamma2_thresholded: vec![f64::NAN; mm],
        theta_m: vec![f64::NAN; mm],
        correction_applied: vec![false; mm],
        theta: f64::NAN,
        no_variation: false,
        thresholding: *thr,
    };
    let mut any_defined = false;
    let mut all_zero = true;
    for m in 0..mm {
        let diag = at(m, m);
        if !diag.is_finite() {
            tracing::warn!(trial = m + 1, "diagonal entry unusable; theta_m undefined");
            continue;
        }
        // row m varies the trial at a fixed population; column m varies the population
        let row: Vec<f64> = (0..mm).map(|k| at(m, k)).filter(|v| v.is_finite()).map(|v| diag - v).collect();
        let col: Vec<f64> = (0..mm).map(|k| at(k, m)).filter(|v| v.is_finite()).map(|v| diag - v).collect();
        if row.len() < 2 || col.len() < 2 {
            tracing::warn!(trial = m + 1, "fewer than two usable cells; theta_m undefined");
            continue;
        }
        let var = |d: &[f64], f: &dyn Fn(f64) -> f64| d.iter().map(|x| f(*x).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let (s2, g2) = (var(&row, &|x| x), var(&col, &|x| x));
        let (s2t, g2t) = (var(&row, &t), var(&col, &t));
        out.sigma2[m] = s2;
        out.gamma2[m] = g2;
        out.sigma2_thresholded[m] = s2t;
        out.gamma2_thresholded[m] = g2t;
        if s2 + g2 == 0.0 {
            continue;
        }
        all_zero = false;
        any_defined = true;
        let raw = ratio(s2, g2);
        // all variation below d: the thresholded ratio counts it as population-driven
        let thresholded = if s2t + g2t > 0.0 { ratio(s2t, g2t) } else { 0.0 };
        if thr.enabled && (raw - thresholded).abs() > thr.switch_margin {
            out.theta_m[m] = thresholded;
            out.correction_applied[m] = true;
        } else {
            out.theta_m[m] = raw;
        }
    }
    if any_defined {
        let usable: Vec<f64> = out.theta_m.iter().cloned().filter(|v| v.is_finite()).collect();
        out.theta = usable.iter().sum::<f64>() / usable.len() as f64;
    } else {
        out.no_variation = all_zero;
    }
    Ok(out)
}

pub fn decompose(s: &StandardizationMatrix, thr: &Thresholding) -> Result<ThetaSummary> {
    decompose_matrix(&s.s_hat, s.n_trials, thr)
}

/// Draws S_b = S_hat + Phi' z_b / n with z_b standard normal of length n,
/// generated from `(seed, b)` alone.  Returns the replicate matrices,
/// row-major B x M^2.
pub fn bootstrap_matrices(s: &StandardizationMatrix, b_count: usize, seed: u64) -> Result<Vec<f64>> {
    if s.if_factor.is_empty() {
        return Err(Error::InvalidInput("bootstrap needs the influence factor".into()));
    }
    let phi = s.centered_factor();
    let n = s.n_subjects;
    let w = s.n_trials * s.n_trials;
    let base: Vec<f64> = s.s_hat.iter().map(|v| if v.is_finite() { *v } else { f64::NAN }).collect();
    const BLOCK: usize = 16;
    let blocks: Vec<Vec<f64>> = (0..b_count.div_ceil(BLOCK))
        .into_par_iter()
        .map(|blk| {
            let reps: Vec<usize> = (blk * BLOCK..((blk + 1) * BLOCK).min(b_count)).collect();
            let z: Vec<Vec<f64>> = reps
                .iter()
                .map(|&b| {
                    let mut r = rng::indexed_stream(seed, "bootstrap", b as u64);
                    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
                })
                .collect();
            let mut acc = vec![0.0; reps.len() * w];
            for i in 0..n {
                let row = &phi[i * w..(i + 1) * w];
                for (k, zk) in z.iter().enumerate() {
                    let zi = zk[i];
                    for (a, p) in acc[k * w..(k + 1) * w].iter_mut().zip(row) {
                        *a += zi * p;
                    }
                }
            }
            for k in 0..reps.len() {
                for (a, s0) in acc[k * w..(k + 1) * w].iter_mut().zip(&base) {
                    *a = s0 + *a / n as f64;
                }
            }
            acc
        })
        .collect();
    Ok(blocks.concat())
}

/// theta for each bootstrap replicate of S.
pub fn bootstrap_theta(s: &StandardizationMatrix, b_count: usize, seed: u64, thr: &Thresholding) -> Result<Vec<f64>> {
    if b_count < 100 {
        tracing::warn!(b = b_count, "fewer than 100 bootstrap replicates; percentiles are unstable");
    }
    let w = s.n_trials * s.n_trials;
    let mats = bootstrap_matrices(s, b_count, seed)?;
    mats.par_chunks(w)
        .map(|m| decompose_matrix(m, s.n_trials, thr).map(|t| t.theta))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapTest {
    pub replicates: usize,
    pub delta: f64,
    pub lower: f64,
    pub upper: f64,
    pub reject: bool,
}

/// Percentile (2.5%, 97.5%) interval; reject the boundary hypothesis when it
/// lies inside (delta, 1 - delta).
pub fn test_boundary(theta_reps: &[f64], delta: f64) -> Result<BootstrapTest> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidSpec(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    let mut finite: Vec<f64> = theta_reps.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InvalidInput("no usable bootstrap replicates".into()));
    }
    if finite.len() < theta_reps.len() {
        tracing::warn!(dropped = theta_reps.len() - finite.len(), "undefined bootstrap replicates dropped");
    }
    let lower = quantile(&mut finite, 0.025);
    let upper = quantile(&mut finite, 0.975);
    Ok(BootstrapTest {
        replicates: finite.len(),
        delta,
        lower,
        upper,
        reject: delta < lower && upper < 1.0 - delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_population_shift_gives_zero() {
        let s = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0];
        let t = decompose_matrix(&s, 3, &Thresholding::disabled()).unwrap();
        assert_eq!(t.theta, 0.0);
        assert!(t.sigma2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_time_effect_gives_one() {
        let s = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let t = decompose_matrix(&s, 3, &Thresholding::default()).unwrap();
        assert_eq!(t.theta, 1.0);
    }

    #[test]
    fn constant_matrix_has_no_variation() {
        let t = decompose_matrix(&[0.3; 4], 2, &Thresholding::default()).unwrap();
        assert!(t.theta.is_nan());
        assert!(t.no_variation);
        assert!(t.theta_m.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn tiny_differences_are_thresholded() {
        // rows differ by 0.001 per step: raw theta is 1 but everything is below d
        let s = [0.0, 0.001, 0.002, 0.0, 0.001, 0.002, 0.0, 0.001, 0.002];
        let t = decompose_matrix(&s, 3, &Thresholding::default()).unwrap();
        assert_eq!(t.theta, 0.0);
        assert!(t.correction_applied.iter().all(|c| *c));
        let raw = decompose_matrix(&s, 3, &Thresholding::disabled()).unwrap();
        assert_eq!(raw.theta, 1.0);
    }

    #[test]
    fn boundary_test_rejects_interior_interval() {
        let reps: Vec<f64> = (0..1000).map(|i| 0.4 + 0.2 * i as f64 / 999.0).collect();
        let t = test_boundary(&reps, 0.05).unwrap();
        assert!(t.reject);
        let high: Vec<f64> = reps.iter().map(|r| r + 0.5).collect();
        assert!(!test_boundary(&high, 0.05).unwrap().reject);
        assert!(test_boundary(&[], 0.05).is_err());
        assert!(test_boundary(&reps, 0.5).is_err());
    }
}
