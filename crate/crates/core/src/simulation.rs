//! Plasmode-style simulation: a synthetic covariate pool, the three
//! covariate-shift rules and six outcome models, and analytic truth for
//! trial-specific and cross-trial effects.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose_matrix, Thresholding};
use crate::error::{Error, Result};
use crate::rng;
use crate::spline::NaturalSpline;
use crate::trial_data::{read_csv, Covariate, CovariateSchema, EligibleRecord, TrialPanel};

pub const AGE: &str = "baseline_age";
pub const BMI: &str = "baseline_bmi";
pub const T2DM: &str = "t2dm";

/// Covariate schema of the bariatric-surgery application.
pub fn application_schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        Covariate::binary("gender"),
        Covariate::numeric(AGE),
        Covariate::numeric(BMI),
        Covariate::categorical("site", &["WA", "NC", "SC"]),
        Covariate::binary("race"),
        Covariate::categorical("smoking_status", &["current", "former", "never"]),
        Covariate::binary("hypertension"),
        Covariate::binary("hypertension_rx"),
        Covariate::binary("dyslipidemia"),
        Covariate::binary("antilipemic_rx"),
        Covariate::binary(T2DM),
        Covariate::binary("insulin"),
    ])
    .expect("static schema is valid")
}

/// Baseline covariate vectors L_1 to sample subjects from.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePool {
    pub schema: CovariateSchema,
    pub rows: Vec<Vec<f64>>,
}

pub const MIN_POOL: usize = 1_000;

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Synthetic stand-in for an empirical pool.
///
/// BMI is normal(44, 5) truncated to [35, 70], age uniform on [19, 79].
/// Diabetes follows expit(a + 0.05 (bmi - 44) + 0.03 (age - 49)) with `a`
/// calibrated so the pool prevalence is 20% in expectation.  Insulin use is
/// 0.02 + 0.3 * diabetes; hypertension and dyslipidemia medications are
/// likelier given the condition (0.7 vs 0.1, 0.5 vs 0.1).  The remaining
/// binaries and categories have fixed marginals.
pub fn synth_pool(size: usize, seed: u64) -> Result<CovariatePool> {
    if size < MIN_POOL {
        return Err(Error::InvalidInput(format!("pool size must be at least {MIN_POOL}, got {size}")));
    }
    let schema = application_schema();
    let mut rng = rng::stream(seed, "pool");
    let bmi_dist = Normal::new(44.0, 5.0).unwrap();
    let mut bmi = Vec::with_capacity(size);
    let mut age = Vec::with_capacity(size);
    for _ in 0..size {
        let b = loop {
            let v: f64 = bmi_dist.sample(&mut rng);
            if (35.0..=70.0).contains(&v) {
                break v;
            }
        };
        bmi.push(b);
        age.push(rng.random_range(19.0..79.0));
    }
    let lin = |k: usize| 0.05 * (bmi[k] - 44.0) + 0.03 * (age[k] - 49.0);
    let prevalence = |a: f64| (0..size).map(|k| expit(a + lin(k))).sum::<f64>() / size as f64;
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if prevalence(mid) < 0.2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);

    let mut rows = Vec::with_capacity(size);
    for k in 0..size {
        let site = categorical(&mut rng, &[0.2, 0.4]);
        let smoking = categorical(&mut rng, &[0.1, 0.3]);
        let mut bern = |p: f64| if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let t2dm = bern(expit(a + lin(k)));
        let hypertension = bern(0.5);
        let dyslipidemia = bern(0.4);
        let gender = bern(0.3);
        let race = bern(0.6);
        let hypertension_rx = bern(if hypertension == 1.0 { 0.7 } else { 0.1 });
        let antilipemic_rx = bern(if dyslipidemia == 1.0 { 0.5 } else { 0.1 });
        let insulin = bern(0.02 + 0.3 * t2dm);
        rows.push(vec![
            gender,
            age[k],
            bmi[k],
            site,
            race,
            smoking,
            hypertension,
            hypertension_rx,
            dyslipidemia,
            antilipemic_rx,
            t2dm,
            insulin,
        ]);
    }
    Ok(CovariatePool { schema, rows })
}

/// Level index drawn with probabilities `head` for the first levels and the
/// remainder for the last.
fn categorical<R: Rng>(rng: &mut R, head: &[f64]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in head.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as f64;
        }
    }
    head.len() as f64
}

impl CovariatePool {
    /// Read a pool from a CSV whose header names the application covariates.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let schema = application_schema();
        let text = std::fs::read_to_string(path)?;
        // Reuse the panel reader by framing each row as an eligible trial-1 record.
        let mut framed = String::new();
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty pool file".into()))?;
        framed.push_str("subject_id,trial,eligible,treatment,outcome,");
        framed.push_str(header);
        framed.push('\n');
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            framed.push_str(&format!("p{k:09},1,1,0,0,{line}\n"));
        }
        let (panel, report) = read_csv(framed.as_bytes(), &schema, path)?;
        if report.coerced_rows > 0 {
            tracing::warn!(dropped = report.coerced_rows, "pool rows with missing values skipped");
        }
        let rows: Vec<Vec<f64>> = (0..panel.n_subjects())
            .filter_map(|i| panel.record(i, 1).map(|r| r.covariates.clone()))
            .collect();
        if rows.len() < MIN_POOL {
            return Err(Error::InvalidInput(format!("pool needs at least {MIN_POOL} complete rows")));
        }
        Ok(Self { schema, rows })
    }

    pub fn mean(&self, name: &str) -> f64 {
        let k = self.schema.position(name).expect("covariate in schema");
        self.rows.iter().map(|r| r[k]).sum::<f64>() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftRule {
    None,
    Linear,
    Flexible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    Constant,
    Linear,
    Spline,
    EffectMod,
    LinearEffectMod,
    SplineEffectMod,
}

impl OutcomeModel {
    pub const ALL: [OutcomeModel; 6] = [
        OutcomeModel::Constant,
        OutcomeModel::Linear,
        OutcomeModel::Spline,
        OutcomeModel::EffectMod,
        OutcomeModel::LinearEffectMod,
        OutcomeModel::SplineEffectMod,
    ];

    /// Scenario number 1..6 in the order listed.
    pub fn number(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).unwrap() + 1
    }

    pub fn from_number(k: usize) -> Option<Self> {
        Self::ALL.get(k.wrapping_sub(1)).copied()
    }

    fn has_slope(self) -> bool {
        matches!(self, OutcomeModel::Linear | OutcomeModel::LinearEffectMod)
    }

    fn has_spline(self) -> bool {
        matches!(self, OutcomeModel::Spline | OutcomeModel::SplineEffectMod)
    }

    fn has_modification(self) -> bool {
        matches!(self, OutcomeModel::EffectMod | OutcomeModel::LinearEffectMod | OutcomeModel::SplineEffectMod)
    }
}

impl ShiftRule {
    pub const ALL: [ShiftRule; 3] = [ShiftRule::None, ShiftRule::Linear, ShiftRule::Flexible];
}

fn table(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Data-generating coefficients; main-effect maps are keyed by encoded
/// covariate name plus "(Intercept)".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Coefficients {
    pub propensity: BTreeMap<String, f64>,
    pub outcome: BTreeMap<String, f64>,
    /// Treatment main effect without effect modification (models 1-3).
    pub treatment: f64,
    /// Treatment main effect with effect modification (models 4-6).
    pub treatment_modified: f64,
    /// Coefficient on treatment x trial index.
    pub trial_slope: f64,
    /// Coefficients on treatment x spline row.
    pub spline: [f64; 3],
    /// Treatment interactions with age, diabetes and BMI.
    pub modifier_age: f64,
    pub modifier_t2dm: f64,
    pub modifier_bmi: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self {
            propensity: table(&[
                ("(Intercept)", -2.49),
                (BMI, 6.7e-2),
                ("gender", -1.01),
                ("race", 0.41),
                ("site[NC]", -0.39),
                ("site[SC]", 0.35),
                (AGE, -4.9e-2),
                (T2DM, -3.4e-2),
                ("insulin", -2e-2),
                ("hypertension", 0.70),
                ("hypertension_rx", -0.34),
                ("dyslipidemia", 0.42),
                ("antilipemic_rx", -0.21),
                ("smoking_status[former]", 2.16),
                ("smoking_status[never]", 1.66),
            ]),
            outcome: table(&[
                ("(Intercept)", 9.8e-2),
                (BMI, -1.9e-3),
                ("gender", 4.7e-3),
                ("race", -3.1e-3),
                ("site[NC]", -2.4e-3),
                ("site[SC]", -7.9e-3),
                (AGE, -6.1e-4),
                (T2DM, -1.2e-2),
                ("insulin", 1.3e-2),
                ("hypertension", 1.3e-3),
                ("hypertension_rx", -8e-5),
                ("dyslipidemia", -8.8e-4),
                ("antilipemic_rx", 3.6e-4),
                ("smoking_status[former]", -2.6e-3),
                ("smoking_status[never]", 4.6e-4),
            ]),
            treatment: -0.21,
            treatment_modified: 0.67,
            trial_slope: 1e-3,
            spline: [1e-2, 6e-2, 1e-2],
            modifier_age: 2e-3,
            modifier_t2dm: 1e-1,
            modifier_bmi: -2.5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub shift: ShiftRule,
    pub outcome: OutcomeModel,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    pub n_subjects: usize,
    #[serde(default = "default_sigma_y")]
    pub sigma_y: f64,
    #[serde(default)]
    pub coefficients: Coefficients,
    /// Assign every subject-trial to this arm instead of drawing treatment.
    #[serde(default)]
    pub forced_arm: Option<u8>,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    36
}

fn default_sigma_y() -> f64 {
    0.05
}

impl ScenarioSpec {
    pub fn new(shift: ShiftRule, outcome: OutcomeModel, n_trials: usize, n_subjects: usize, seed: u64) -> Self {
        Self {
            shift,
            outcome,
            n_trials,
            n_subjects,
            sigma_y: default_sigma_y(),
            coefficients: Coefficients::default(),
            forced_arm: None,
            seed,
        }
    }
}

/// A validated scenario with coefficient vectors aligned to the encoded schema.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    schema: CovariateSchema,
    alpha_pi: Vec<f64>,
    alpha_mu: Vec<f64>,
    pi_intercept: f64,
    mu_intercept: f64,
    spline_rows: Vec<[f64; 3]>,
    idx_age: usize,
    idx_bmi: usize,
    idx_t2dm: usize,
    pool_age: f64,
    pool_bmi: f64,
    pool_t2dm: f64,
}

fn align(map: &BTreeMap<String, f64>, names: &[String], what: &str) -> Result<(f64, Vec<f64>)> {
    for key in map.keys() {
        if key != "(Intercept)" && !names.contains(key) {
            return Err(Error::InvalidSpec(format!("{what} coefficient `{key}` names no covariate")));
        }
    }
    let intercept = map.get("(Intercept)").copied().unwrap_or(0.0);
    Ok((intercept, names.iter().map(|n| map.get(n).copied().unwrap_or(0.0)).collect()))
}

impl Scenario {
    pub fn new(spec: ScenarioSpec, pool: &CovariatePool) -> Result<Self> {
        if spec.n_trials < 2 {
            return Err(Error::InvalidSpec("scenarios need at least two trials".into()));
        }
        if spec.n_subjects == 0 {
            return Err(Error::InvalidSpec("scenarios need at least one subject".into()));
        }
        if !(spec.sigma_y >= 0.0 && spec.sigma_y.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma_y must be finite and nonnegative, got {}", spec.sigma_y)));
        }
        if matches!(spec.forced_arm, Some(a) if a > 1) {
            return Err(Error::InvalidSpec("forced_arm must be 0 or 1".into()));
        }
        let schema = pool.schema.clone();
        let names = schema.encoded_names();
        let (pi_intercept, alpha_pi) = align(&spec.coefficients.propensity, &names, "propensity")?;
        let (mu_intercept, alpha_mu) = align(&spec.coefficients.outcome, &names, "outcome")?;
        let spline = NaturalSpline::terciles(spec.n_trials)?;
        let spline_rows = (1..=spec.n_trials)
            .map(|m| {
                let v = spline.eval(m as f64);
                [v[0], v[1], v[2]]
            })
            .collect();
        let position = |n: &str| {
            schema.position(n).ok_or_else(|| Error::InvalidInput(format!("pool lacks covariate `{n}`")))
        };
        let scenario = Self {
            idx_age: position(AGE)?,
            idx_bmi: position(BMI)?,
            idx_t2dm: position(T2DM)?,
            pool_age: pool.mean(AGE),
            pool_bmi: pool.mean(BMI),
            pool_t2dm: pool.mean(T2DM),
            spec,
            schema,
            alpha_pi,
            alpha_mu,
            pi_intercept,
            mu_intercept,
            spline_rows,
        };
        for m in 2..=scenario.spec.n_trials {
            let p = scenario.diabetes_prevalence(m);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!(
                    "diabetes prevalence {p:.4} at trial {m} leaves [0, 1]"
                )));
            }
        }
        Ok(scenario)
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// Row m of the natural-spline design ns(1:M, df = 3).
    pub fn spline_row(&self, m: usize) -> [f64; 3] {
        self.spline_rows[m - 1]
    }

    /// Target diabetes prevalence at trial m >= 2 (pool prevalence without shift).
    pub fn diabetes_prevalence(&self, m: usize) -> f64 {
        match self.spec.shift {
            ShiftRule::None => self.pool_t2dm,
            ShiftRule::Linear => 0.2 + 0.4 * (m as f64 - 1.0) / 35.0,
            ShiftRule::Flexible => {
                let x = self.spline_row(m);
                0.2 + 0.02 * x[0] + 0.6 * x[1] - 0.08 * x[2]
            }
        }
    }

    /// Mean BMI increment at trial m.
    pub fn bmi_shift(&self, m: usize) -> f64 {
        match self.spec.shift {
            ShiftRule::None => 0.0,
            ShiftRule::Linear => (m as f64 - 1.0) / 12.0,
            ShiftRule::Flexible => {
                let x = self.spline_row(m);
                x[0] - 3.0 * x[1] + x[2]
            }
        }
    }

    fn age_shift(&self, m: usize) -> f64 {
        match self.spec.shift {
            ShiftRule::None => 0.0,
            _ => (m as f64 - 1.0) / 12.0,
        }
    }

    /// Calendar-time component g(m) of the treatment effect.
    pub fn time_effect(&self, m: usize) -> f64 {
        let c = &self.spec.coefficients;
        let mut g = if self.spec.outcome.has_modification() { c.treatment_modified } else { c.treatment };
        if self.spec.outcome.has_slope() {
            g += c.trial_slope * m as f64;
        }
        if self.spec.outcome.has_spline() {
            let x = self.spline_row(m);
            g += c.spline[0] * x[0] + c.spline[1] * x[1] + c.spline[2] * x[2];
        }
        g
    }

    fn modification(&self, age: f64, t2dm: f64, bmi: f64) -> f64 {
        if !self.spec.outcome.has_modification() {
            return 0.0;
        }
        let c = &self.spec.coefficients;
        c.modifier_age * age + c.modifier_t2dm * t2dm + c.modifier_bmi * bmi
    }

    fn linear_predictor(&self, intercept: f64, alpha: &[f64], cov: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(alpha.len());
        self.schema.encode_into(cov, &mut x);
        intercept + alpha.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()
    }

    /// True propensity score pi(L).
    pub fn propensity(&self, cov: &[f64]) -> f64 {
        expit(self.linear_predictor(self.pi_intercept, &self.alpha_pi, cov))
    }

    /// True conditional mean mu_m(a, L).
    pub fn outcome_mean(&self, m: usize, arm: u8, cov: &[f64]) -> f64 {
        let base = self.linear_predictor(self.mu_intercept, &self.alpha_mu, cov);
        if arm == 0 {
            return base;
        }
        base + self.time_effect(m) + self.modification(cov[self.idx_age], cov[self.idx_t2dm], cov[self.idx_bmi])
    }

    /// Covariate vectors L_1..L_M of one subject drawn from `pool`.
    fn covariate_path<R: Rng>(&self, pool: &CovariatePool, rng: &mut R) -> Vec<Vec<f64>> {
        let base = &pool.rows[rng.random_range(0..pool.rows.len())];
        let mut path = Vec::with_capacity(self.spec.n_trials);
        path.push(base.clone());
        for m in 2..=self.spec.n_trials {
            let mut l = base.clone();
            if self.spec.shift != ShiftRule::None {
                let z: f64 = StandardNormal.sample(rng);
                l[self.idx_bmi] += self.bmi_shift(m) + z;
                l[self.idx_t2dm] = if rng.random::<f64>() < self.diabetes_prevalence(m) { 1.0 } else { 0.0 };
                l[self.idx_age] += self.age_shift(m);
            }
            path.push(l);
        }
        path
    }

    fn subject_records(&self, pool: &CovariatePool, i: usize) -> Vec<Option<EligibleRecord>> {
        let mut rng = rng::indexed_stream(self.spec.seed, "subject", i as u64);
        let path = self.covariate_path(pool, &mut rng);
        path.into_iter()
            .enumerate()
            .map(|(k, cov)| {
                let m = k + 1;
                let u: f64 = rng.random();
                let a = self.spec.forced_arm.unwrap_or((u < self.propensity(&cov)) as u8);
                let z: f64 = StandardNormal.sample(&mut rng);
                let y = self.outcome_mean(m, a, &cov) + self.spec.sigma_y * z;
                Some(EligibleRecord { covariates: cov, treatment: a, outcome: y })
            })
            .collect()
    }

    /// Simulate a panel; subject i depends only on (seed, i).
    pub fn generate(&self, pool: &CovariatePool) -> Result<TrialPanel> {
        let n = self.spec.n_subjects;
        let records: Vec<Option<EligibleRecord>> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| self.subject_records(pool, i))
            .collect();
        let ids = (0..n).map(|i| format!("S{i:07}")).collect();
        TrialPanel::new(self.schema.clone(), ids, self.spec.n_trials, records)
    }

    /// E[L_j] for the three effect modifiers (age, t2dm, bmi).
    fn modifier_means(&self, j: usize) -> (f64, f64, f64) {
        let t2dm = if j == 1 { self.pool_t2dm } else { self.diabetes_prevalence(j) };
        (self.pool_age + self.age_shift(j), t2dm, self.pool_bmi + self.bmi_shift(j))
    }

    /// chi_{j,m}: effect at trial m in the population eligible at trial j.
    pub fn truth_cross(&self, j: usize, m: usize) -> f64 {
        let (age, t2dm, bmi) = self.modifier_means(j);
        self.time_effect(m) + self.modification(age, t2dm, bmi)
    }

    pub fn truth_chi(&self) -> Vec<f64> {
        (1..=self.spec.n_trials).map(|m| self.truth_cross(m, m)).collect()
    }

    /// Row-major M x M matrix of true cross-trial effects.
    pub fn truth_matrix(&self) -> Vec<f64> {
        let mm = self.spec.n_trials;
        (0..mm * mm).map(|k| self.truth_cross(k / mm + 1, k % mm + 1)).collect()
    }

    /// True theta_m (no thresholding); NaN where S has no variation.
    pub fn truth_theta_m(&self) -> Vec<f64> {
        decompose_matrix(&self.truth_matrix(), self.spec.n_trials, &Thresholding::disabled())
            .map(|t| t.theta_m)
            .unwrap_or_else(|_| vec![f64::NAN; self.spec.n_trials])
    }

    /// Monte Carlo mean and standard error of Y(1) - Y(0) per trial over
    /// `n` simulated subjects (common outcome noise across arms).
    pub fn mc_effects(&self, pool: &CovariatePool, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mm = self.spec.n_trials;
        const CHUNK: usize = 10_000;
        let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut s = vec![0.0; mm];
                let mut ss = vec![0.0; mm];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let mut rng = rng::indexed_stream(seed, "mc-subject", i as u64);
                    for (k, cov) in self.covariate_path(pool, &mut rng).iter().enumerate() {
                        let d = self.outcome_mean(k + 1, 1, cov) - self.outcome_mean(k + 1, 0, cov);
                        s[k] += d;
                        ss[k] += d * d;
                    }
                }
                (s, ss)
            })
            .collect();
        let mut s = vec![0.0; mm];
        let mut ss = vec![0.0; mm];
        for (a, b) in partial {
            for k in 0..mm {
                s[k] += a[k];
                ss[k] += b[k];
            }
        }
        let nf = n as f64;
        (0..mm)
            .map(|k| {
                let mean = s[k] / nf;
                let var = (ss[k] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
                (mean, (var / nf).sqrt())
            })
            .collect()
    }
}
