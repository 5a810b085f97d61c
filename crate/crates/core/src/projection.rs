//! Projection of the estimated effect curve onto candidate marginal
//! structural models psi(m; beta) = b(m)' beta, with sandwich covariance and
//! pointwise Wald bands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::EffectCurve;
use crate::spline::NaturalSpline;

/// Functional form of a candidate MSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisKind {
    Constant,
    Linear,
    Polynomial { degree: usize },
    NaturalSpline { knots: Vec<f64> },
    Saturated,
}

/// A candidate as written in configuration: a display name and a form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatCandidate", into = "FlatCandidate")]
pub struct CandidateSpec {
    pub name: String,
    pub kind: BasisKind,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so the wire form
// lists every field and is checked on conversion.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatCandidate {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knots: Option<Vec<f64>>,
}

impl TryFrom<FlatCandidate> for CandidateSpec {
    type Error = String;

    fn try_from(f: FlatCandidate) -> std::result::Result<Self, String> {
        let extra = |what: &str| format!("candidate `{}`: `{what}` does not apply to kind `{}`", f.name, f.kind);
        let kind = match (f.kind.as_str(), f.degree, f.knots.clone()) {
            ("constant", None, None) => BasisKind::Constant,
            ("linear", None, None) => BasisKind::Linear,
            ("saturated", None, None) => BasisKind::Saturated,
            ("polynomial", Some(degree), None) => BasisKind::Polynomial { degree },
            ("polynomial", None, _) => return Err(format!("candidate `{}` needs `degree`", f.name)),
            ("natural_spline", None, Some(knots)) => BasisKind::NaturalSpline { knots },
            ("natural_spline", _, None) => return Err(format!("candidate `{}` needs `knots`", f.name)),
            ("constant" | "linear" | "saturated" | "natural_spline", Some(_), _) => return Err(extra("degree")),
            ("constant" | "linear" | "saturated" | "polynomial", _, Some(_)) => return Err(extra("knots")),
            (other, _, _) => {
                return Err(format!(
                    "candidate `{}`: unknown kind `{other}`, expected constant, linear, polynomial, natural_spline or saturated",
                    f.name
                ))
            }
        };
        Ok(CandidateSpec { name: f.name, kind })
    }
}

impl From<CandidateSpec> for FlatCandidate {
    fn from(c: CandidateSpec) -> Self {
        let (kind, degree, knots) = match c.kind {
            BasisKind::Constant => ("constant", None, None),
            BasisKind::Linear => ("linear", None, None),
            BasisKind::Saturated => ("saturated", None, None),
            BasisKind::Polynomial { degree } => ("polynomial", Some(degree), None),
            BasisKind::NaturalSpline { knots } => ("natural_spline", None, Some(knots)),
        };
        FlatCandidate { name: c.name, kind: kind.into(), degree, knots }
    }
}

impl CandidateSpec {
    pub fn new(name: &str, kind: BasisKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Constant, linear, cubic, and natural splines with two and three interior
/// knots spread evenly over the trial range.
pub fn default_candidates(n_trials: usize) -> Vec<CandidateSpec> {
    let mut out = vec![
        CandidateSpec::new("Constant", BasisKind::Constant),
        CandidateSpec::new("Linear", BasisKind::Linear),
        CandidateSpec::new("Cubic", BasisKind::Polynomial { degree: 3 }),
    ];
    let m = n_trials as f64;
    for count in [2usize, 3] {
        let knots: Vec<f64> = (1..=count).map(|k| (m * k as f64 / (count + 1) as f64).round()).collect();
        let inside = knots.iter().all(|&k| k > 1.0 && k < m);
        let distinct = knots.windows(2).all(|w| w[0] < w[1]);
        if inside && distinct {
            out.push(CandidateSpec::new(
                &format!("Spline ({count} Knots)"),
                BasisKind::NaturalSpline { knots },
            ));
        }
    }
    out
}

/// A basis b(m) evaluated on trials 1..M.
#[derive(Debug, Clone)]
pub struct MsmBasis {
    pub name: String,
    pub kind: BasisKind,
    n_trials: usize,
    spline: Option<NaturalSpline>,
}

impl MsmBasis {
    pub fn new(spec: &CandidateSpec, n_trials: usize) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidSpec(format!("basis `{}`: {msg}", spec.name));
        let mut spline = None;
        match &spec.kind {
            BasisKind::Polynomial { degree } if *degree == 0 => {
                return Err(invalid("polynomial degree must be at least 1".into()))
            }
            BasisKind::NaturalSpline { knots } => {
                if knots.is_empty() {
                    return Err(invalid("natural spline needs at least one interior knot".into()));
                }
                if knots.iter().any(|&k| !(k > 1.0 && k < n_trials as f64)) {
                    return Err(invalid(format!("knots must lie strictly inside (1, {n_trials})")));
                }
                spline = Some(
                    NaturalSpline::new(knots, (1.0, n_trials as f64), false)
                        .map_err(|e| invalid(e.to_string()))?,
                );
            }
            _ => {}
        }
        Ok(Self { name: spec.name.clone(), kind: spec.kind.clone(), n_trials, spline })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            BasisKind::Constant => 1,
            BasisKind::Linear => 2,
            BasisKind::Polynomial { degree } => degree + 1,
            BasisKind::NaturalSpline { .. } => 1 + self.spline.as_ref().unwrap().dim(),
            BasisKind::Saturated => self.n_trials,
        }
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    /// b(m); trial indices enter uncentered.
    pub fn eval(&self, m: usize) -> Vec<f64> {
        let x = m as f64;
        match &self.kind {
            BasisKind::Constant => vec![1.0],
            BasisKind::Linear => vec![1.0, x],
            BasisKind::Polynomial { degree } => (0..=*degree).map(|d| x.powi(d as i32)).collect(),
            BasisKind::NaturalSpline { .. } => {
                let mut v = vec![1.0];
                v.extend(self.spline.as_ref().unwrap().eval(x));
                v
            }
            BasisKind::Saturated => (1..=self.n_trials).map(|t| if t == m { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn psi(&self, m: usize, beta: &[f64]) -> f64 {
        self.eval(m).iter().zip(beta).map(|(b, c)| b * c).sum()
    }
}

/// User weights w(m); the effective weight is h(m) = w(m) P_n(E_m = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialWeights(pub Vec<f64>);

impl TrialWeights {
    pub fn uniform(n_trials: usize) -> Self {
        Self(vec![1.0; n_trials])
    }

    pub fn validate(&self, n_trials: usize) -> Result<()> {
        if self.0.len() != n_trials {
            return Err(Error::InvalidSpec(format!(
                "expected {n_trials} trial weights, got {}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidSpec("trial weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// h(m), zeroed where the estimate is unusable.
    pub fn effective(&self, curve: &EffectCurve) -> Vec<f64> {
        self.0
            .iter()
            .zip(&curve.eligible_fraction)
            .zip(&curve.chi)
            .map(|((w, p), c)| if c.is_finite() { w * p } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MsmFit {
    pub name: String,
    pub kind: BasisKind,
    pub dim: usize,
    pub beta: Vec<f64>,
    pub v_hat: Vec<Vec<f64>>,
    pub c_hat: Vec<Vec<f64>>,
    pub cov_beta: Vec<Vec<f64>>,
    pub alpha: f64,
    /// psi(m; beta_hat) for m = 1..M.
    pub fitted: Vec<f64>,
    pub fitted_se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub convergence: Convergence,
}

impl MsmFit {
    /// h-weighted pooled variance of the fitted curve.
    pub fn pooled_variance(&self, h: &[f64]) -> f64 {
        let total: f64 = h.iter().sum();
        h.iter().zip(&self.fitted_se).map(|(w, s)| w * s * s).sum::<f64>() / total
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn design(basis: &MsmBasis) -> Vec<Vec<f64>> {
    (1..=basis.n_trials).map(|m| basis.eval(m)).collect()
}

/// sum_m h(m) b(m) (chi_m - b(m)' beta)
pub fn estimating_equation(basis: &MsmBasis, chi: &[f64], h: &[f64], beta: &[f64]) -> Vec<f64> {
    let k = basis.dim();
    let mut u = vec![0.0; k];
    for m in 1..=basis.n_trials {
        if h[m - 1] == 0.0 {
            continue;
        }
        let b = basis.eval(m);
        let r = chi[m - 1] - basis.psi(m, beta);
        for a in 0..k {
            u[a] += h[m - 1] * b[a] * r;
        }
    }
    u
}

/// Weighted least squares of chi on b(m) with weights h(m), solved by SVD of
/// the sqrt(h)-scaled design.
pub fn closed_form(basis: &MsmBasis, chi: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..basis.n_trials).filter(|&m| h[m] > 0.0).collect();
    let k = basis.dim();
    let rank_error = || Error::RankDeficient { basis: basis.name.clone(), usable: rows.len(), dim: k };
    if rows.len() < k {
        return Err(rank_error());
    }
    let b = design(basis);
    let x = DMatrix::from_fn(rows.len(), k, |r, c| h[rows[r]].sqrt() * b[rows[r]][c]);
    let y = DVector::from_fn(rows.len(), |r, _| h[rows[r]].sqrt() * chi[rows[r]]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return Err(rank_error());
    }
    let beta = svd.solve(&y, 0.0).map_err(|_| rank_error())?;
    Ok(beta.iter().cloned().collect())
}

/// Damped Newton iteration for a root of `residual`, halving the step until
/// the residual norm decreases.
pub fn damped_newton(
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> DMatrix<f64>,
    start: Vec<f64>,
    scale: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, Convergence)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut beta = start;
    let mut r = residual(&beta);
    let mut trace = vec![norm(&r)];
    for it in 0..max_iter {
        if norm(&r) <= tol * scale {
            return Ok((beta, Convergence { iterations: it, residual_norm: norm(&r) }));
        }
        let j = jacobian(&beta);
        let step = j
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::NoConvergence { iterations: it, trace: trace.clone() })?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let rc = residual(&cand);
            if norm(&rc) < norm(&r) || t < 1e-8 {
                beta = cand;
                r = rc;
                break;
            }
            t *= 0.5;
        }
        trace.push(norm(&r));
    }
    if norm(&r) <= tol * scale {
        return Ok((beta, Convergence { iterations: max_iter, residual_norm: norm(&r) }));
    }
    Err(Error::NoConvergence { iterations: max_iter, trace })
}

/// Solve the projection estimating equation with the Newton solver.
pub fn newton_projection(basis: &MsmBasis, chi: &[f64], h: &[f64]) -> Result<(Vec<f64>, Convergence)> {
    let k = basis.dim();
    let v = gram(basis, h);
    let scale = equation_scale(basis, chi, h);
    damped_newton(
        |beta| estimating_equation(basis, chi, h, beta),
        |_| -v.clone(),
        vec![0.0; k],
        scale,
        100,
        1e-12,
    )
}

fn gram(basis: &MsmBasis, h: &[f64]) -> DMatrix<f64> {
    let k = basis.dim();
    let mut g = DMatrix::zeros(k, k);
    for m in 1..=basis.n_trials {
        if h[m - 1] == 0.0 {
            continue;
        }
        let b = basis.eval(m);
        for a in 0..k {
            for c in 0..k {
                g[(a, c)] += h[m - 1] * b[a] * b[c];
            }
        }
    }
    g
}

/// Magnitude against which estimating-equation residuals are judged.
pub fn equation_scale(basis: &MsmBasis, chi: &[f64], h: &[f64]) -> f64 {
    let mut s = 0.0_f64;
    for m in 1..=basis.n_trials {
        if h[m - 1] == 0.0 {
            continue;
        }
        let bmax = basis.eval(m).iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        s = s.max(h[m - 1] * bmax * chi[m - 1].abs().max(1.0));
    }
    s.max(f64::MIN_POSITIVE)
}

/// V_hat, C_hat and V^-1 C V^-1 / n for a fitted beta.
pub fn sandwich_cov(
    curve: &EffectCurve,
    basis: &MsmBasis,
    weights: &TrialWeights,
    beta: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let h = weights.effective(curve);
    let k = basis.dim();
    let v = -gram(basis, &h);
    let v_inv = v.clone().try_inverse().ok_or_else(|| Error::RankDeficient {
        basis: basis.name.clone(),
        usable: h.iter().filter(|x| **x > 0.0).count(),
        dim: k,
    })?;
    let b = design(basis);
    let psi: Vec<f64> = (1..=basis.n_trials).map(|m| basis.psi(m, beta)).collect();
    let mut c = DMatrix::zeros(k, k);
    let mut d = vec![0.0; k];
    for i in 0..curve.n_subjects {
        d.fill(0.0);
        for m in 1..=basis.n_trials {
            if h[m - 1] == 0.0 || !curve.is_eligible(i, m) {
                continue;
            }
            let r = weights.0[m - 1] * (curve.dagger(i, m) - psi[m - 1]);
            for a in 0..k {
                d[a] += b[m - 1][a] * r;
            }
        }
        for a in 0..k {
            for e in 0..=a {
                c[(a, e)] += d[a] * d[e];
            }
        }
    }
    let n = curve.n_subjects as f64;
    for a in 0..k {
        for e in 0..=a {
            c[(a, e)] /= n;
            c[(e, a)] = c[(a, e)];
        }
    }
    let mut cov = &v_inv * &c * &v_inv / n;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok((v, c, cov))
}

pub fn fit_projection(curve: &EffectCurve, basis: &MsmBasis, weights: &TrialWeights, alpha: f64) -> Result<MsmFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    weights.validate(basis.n_trials)?;
    if curve.n_trials != basis.n_trials {
        return Err(Error::InvalidInput("basis and effect curve disagree on the number of trials".into()));
    }
    let h = weights.effective(curve);
    if h.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput("trial weights h(m) sum to zero".into()));
    }
    let chi: Vec<f64> = curve.chi.iter().map(|c| if c.is_finite() { *c } else { 0.0 }).collect();
    let beta = closed_form(basis, &chi, &h)?;
    let u = estimating_equation(basis, &chi, &h, &beta);
    let residual_norm = u.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let (v, c, cov) = sandwich_cov(curve, basis, weights, &beta)?;
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    let mut fitted = Vec::with_capacity(basis.n_trials);
    let mut fitted_se = Vec::with_capacity(basis.n_trials);
    for m in 1..=basis.n_trials {
        let b = DVector::from_vec(basis.eval(m));
        fitted.push(basis.psi(m, &beta));
        fitted_se.push((b.transpose() * &cov * &b)[(0, 0)].max(0.0).sqrt());
    }
    let lower = fitted.iter().zip(&fitted_se).map(|(f, s)| f - z * s).collect();
    let upper = fitted.iter().zip(&fitted_se).map(|(f, s)| f + z * s).collect();
    Ok(MsmFit {
        name: basis.name.clone(),
        kind: basis.kind.clone(),
        dim: basis.dim(),
        beta,
        v_hat: to_rows(&v),
        c_hat: to_rows(&c),
        cov_beta: to_rows(&cov),
        alpha,
        fitted,
        fitted_se,
        lower,
        upper,
        convergence: Convergence { iterations: 0, residual_norm },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(kind: BasisKind, m: usize) -> MsmBasis {
        MsmBasis::new(&CandidateSpec::new("b", kind), m).unwrap()
    }

    #[test]
    fn constant_basis_is_weighted_mean() {
        let b = basis(BasisKind::Constant, 4);
        let chi = [1.0, 2.0, 3.0, 4.0];
        let h = [0.1, 0.2, 0.3, 0.4];
        let beta = closed_form(&b, &chi, &h).unwrap();
        assert!((beta[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_reproduces_curve() {
        let b = basis(BasisKind::Saturated, 5);
        let chi = [0.3, -1.0, 2.5, 0.0, 7.0];
        let beta = closed_form(&b, &chi, &[1.0; 5]).unwrap();
        for m in 1..=5 {
            assert!((b.psi(m, &beta) - chi[m - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_agrees_with_closed_form() {
        let chi: Vec<f64> = (1..=12).map(|m| (m as f64 * 0.7).sin()).collect();
        let h: Vec<f64> = (1..=12).map(|m| 0.5 + 0.04 * m as f64).collect();
        for kind in [
            BasisKind::Linear,
            BasisKind::Polynomial { degree: 3 },
            BasisKind::NaturalSpline { knots: vec![4.0, 8.0] },
        ] {
            let b = basis(kind, 12);
            let closed = closed_form(&b, &chi, &h).unwrap();
            let (newton, _) = newton_projection(&b, &chi, &h).unwrap();
            for (a, c) in closed.iter().zip(&newton) {
                assert!((a - c).abs() < 1e-8 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn too_few_trials_is_rank_error() {
        let b = basis(BasisKind::Polynomial { degree: 3 }, 6);
        let h = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        assert!(matches!(closed_form(&b, &[0.0; 6], &h), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn knots_must_be_interior() {
        let spec = CandidateSpec::new("s", BasisKind::NaturalSpline { knots: vec![1.0, 5.0] });
        assert!(MsmBasis::new(&spec, 12).is_err());
        let names: Vec<String> = default_candidates(36).into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["Constant", "Linear", "Cubic", "Spline (2 Knots)", "Spline (3 Knots)"]);
        match &default_candidates(36)[4].kind {
            BasisKind::NaturalSpline { knots } => assert_eq!(knots, &vec![9.0, 18.0, 27.0]),
            _ => unreachable!(),
        }
    }
}
