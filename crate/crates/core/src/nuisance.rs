//! Cross-fitted pooled nuisance models: arm-stratified outcome regressions,
//! the propensity score and the trial-membership classifier, with the
//! truncation rules applied to inverse-probability weights and density ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_probability, fit_regression, Design, LearnerSpec, Model, MultiClassModel, Role};
use crate::rng;
use crate::trial_data::{build_pooled, split_subjects, CovariateSchema, PooledDataset, TrialPanel};

/// Learner choices for the three pooled nuisance models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpecs {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    pub membership: LearnerSpec,
}

impl NuisanceSpecs {
    pub fn parametric() -> Self {
        Self {
            outcome: LearnerSpec::linear(),
            propensity: LearnerSpec::logistic(),
            membership: LearnerSpec::logistic(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate(Role::Outcome)?;
        self.propensity.validate(Role::Propensity)?;
        self.membership.validate(Role::Membership)
    }
}

impl Default for NuisanceSpecs {
    /// Random-forest settings of the reference analysis.
    fn default() -> Self {
        use crate::learners::ForestParams;
        Self {
            outcome: LearnerSpec::TreeEnsemble(ForestParams::with_depth(500, 10)),
            propensity: LearnerSpec::TreeEnsemble(ForestParams::with_depth(500, 2)),
            membership: LearnerSpec::MultinomialTreeEnsemble(ForestParams::with_depth(500, 10)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationPolicy {
    /// Within-arm quantile at which inverse-probability weights are capped.
    pub ps_quantile: f64,
    /// Quantile, over all (j, m) pairs, at which membership ratios are capped.
    pub ratio_quantile: f64,
    /// Hard probability floor; weights never exceed 1 / hard_floor.
    pub hard_floor: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { ps_quantile: 0.99, ratio_quantile: 0.99, hard_floor: 0.01 }
    }
}

impl TruncationPolicy {
    /// No quantile truncation; only the hard floor remains.
    pub fn floor_only(hard_floor: f64) -> Self {
        Self { ps_quantile: 1.0, ratio_quantile: 1.0, hard_floor }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("ps_quantile", self.ps_quantile), ("ratio_quantile", self.ratio_quantile)] {
            if !(q > 0.5 && q <= 1.0) {
                return Err(Error::InvalidSpec(format!("{name} must lie in (0.5, 1], got {q}")));
            }
        }
        if !(self.hard_floor > 0.0 && self.hard_floor < 0.5) {
            return Err(Error::InvalidSpec(format!(
                "hard_floor must lie in (0, 0.5), got {}",
                self.hard_floor
            )));
        }
        Ok(())
    }
}

/// Which optional prediction sets to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossFitOptions {
    /// Predict mu_{m'}(a, L) at every trial m', needed for cross-trial effects.
    pub counterfactual_grid: bool,
    /// Fit the trial-membership classifier.
    pub membership: bool,
}

impl CrossFitOptions {
    pub const FULL: Self = Self { counterfactual_grid: true, membership: true };
    pub const DIAGONAL: Self = Self { counterfactual_grid: false, membership: false };
}

/// Type-7 (linear interpolation) sample quantile of unsorted data.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

struct FeatureMap {
    width: usize,
    n_trials: usize,
}

impl FeatureMap {
    fn new(schema: &CovariateSchema, n_trials: usize) -> Self {
        Self { width: schema.encoded_width(), n_trials }
    }

    fn dim(&self, spec: &LearnerSpec) -> usize {
        self.width + if spec.trial_as_factor() { self.n_trials - 1 } else { 1 }
    }

    /// Encoded covariates followed by the trial-index feature(s).
    fn fill(&self, schema: &CovariateSchema, cov: &[f64], m: usize, spec: &LearnerSpec, out: &mut Vec<f64>) {
        out.clear();
        schema.encode_into(cov, out);
        if spec.trial_as_factor() {
            out.extend((2..=self.n_trials).map(|t| if t == m { 1.0 } else { 0.0 }));
        } else {
            out.push(m as f64);
        }
    }

    fn fill_covariates(&self, schema: &CovariateSchema, cov: &[f64], out: &mut Vec<f64>) {
        out.clear();
        schema.encode_into(cov, out);
    }
}

/// Trained pooled models from one training fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceModels {
    pub schema: CovariateSchema,
    pub n_trials: usize,
    pub specs: NuisanceSpecs,
    pub mu1: Model,
    pub mu0: Model,
    pub pi: Model,
    pub membership: Option<MultiClassModel>,
}

const BLOB_MAGIC: &[u8; 5] = b"CTNM1";

impl NuisanceModels {
    /// Versioned binary blob: the magic header followed by a JSON payload.
    pub fn to_blob(&self) -> Result<Vec<u8>> {
        let mut out = BLOB_MAGIC.to_vec();
        serde_json::to_writer(&mut out, self)?;
        Ok(out)
    }

    pub fn from_blob(blob: &[u8]) -> Result<Self> {
        let payload = blob
            .strip_prefix(BLOB_MAGIC.as_slice())
            .ok_or_else(|| Error::Blob("missing CTNM1 header".into()))?;
        serde_json::from_slice(payload).map_err(|e| Error::Blob(e.to_string()))
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::new(&self.schema, self.n_trials)
    }

    pub fn predict_outcome(&self, cov: &[f64], m: usize, arm: u8) -> f64 {
        let mut buf = Vec::new();
        self.features().fill(&self.schema, cov, m, &self.specs.outcome, &mut buf);
        if arm == 1 { self.mu1.predict(&buf) } else { self.mu0.predict(&buf) }
    }

    pub fn predict_propensity(&self, cov: &[f64], m: usize) -> f64 {
        let mut buf = Vec::new();
        self.features().fill(&self.schema, cov, m, &self.specs.propensity, &mut buf);
        self.pi.predict(&buf)
    }
}

/// Fit the pooled nuisance models on the rows of `train_subjects`.
pub fn fit_pooled_nuisances(
    panel: &TrialPanel,
    pooled: &PooledDataset,
    specs: &NuisanceSpecs,
    train_subjects: &[bool],
    with_membership: bool,
    seed: u64,
) -> Result<NuisanceModels> {
    specs.validate()?;
    let schema = panel.schema();
    let n_trials = panel.n_trials();
    let fm = FeatureMap::new(schema, n_trials);

    let mut x_arm = [
        Design::new(fm.dim(&specs.outcome)),
        Design::new(fm.dim(&specs.outcome)),
    ];
    let mut y_arm: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut x_pi = Design::new(fm.dim(&specs.propensity));
    let mut a_pi = Vec::new();
    let mut x_mem = Design::new(fm.width);
    let mut labels = Vec::new();
    let mut arm_trials = [vec![0usize; n_trials], vec![0usize; n_trials]];
    let mut buf = Vec::new();

    for r in 0..pooled.len() {
        if !train_subjects[pooled.subject[r]] {
            continue;
        }
        let (cov, m, a) = (pooled.covariates(r), pooled.trial[r], pooled.treatment[r]);
        let arm = a as usize;
        fm.fill(schema, cov, m, &specs.outcome, &mut buf);
        x_arm[arm].push(&buf);
        y_arm[arm].push(pooled.outcome[r]);
        arm_trials[arm][m - 1] += 1;
        fm.fill(schema, cov, m, &specs.propensity, &mut buf);
        x_pi.push(&buf);
        a_pi.push(a as f64);
        if with_membership {
            fm.fill_covariates(schema, cov, &mut buf);
            x_mem.push(&buf);
            labels.push(m - 1);
        }
    }

    for arm in [0, 1] {
        if x_arm[arm].n == 0 {
            return Err(Error::Fit {
                model: format!("outcome (arm {arm})"),
                reason: format!(
                    "no training rows in arm {arm}; arm-{} rows by trial: {:?}",
                    1 - arm,
                    arm_trials[1 - arm]
                ),
            });
        }
        let empty: Vec<usize> = (1..=n_trials).filter(|&m| arm_trials[arm][m - 1] == 0).collect();
        if !empty.is_empty() {
            tracing::warn!(arm, trials = ?empty, "training fold has an empty arm at some trials; pooled fit used");
        }
    }

    let fit_arm = |arm: usize| {
        fit_regression(&specs.outcome, &x_arm[arm], &y_arm[arm], rng::derive_seed(seed, &format!("mu{arm}")))
            .map_err(|e| match e {
                Error::SingularDesign { .. } => Error::SingularDesign { model: format!("outcome (arm {arm})") },
                other => other,
            })
    };
    let ((mu1, mu0), (pi, membership)) = rayon::join(
        || rayon::join(|| fit_arm(1), || fit_arm(0)),
        || {
            rayon::join(
                || {
                    fit_probability(&specs.propensity, &x_pi, &a_pi, rng::derive_seed(seed, "pi")).map_err(|e| {
                        match e {
                            Error::SingularDesign { .. } => Error::SingularDesign { model: "propensity".into() },
                            other => other,
                        }
                    })
                },
                || {
                    with_membership
                        .then(|| {
                            MultiClassModel::fit(
                                &specs.membership,
                                &x_mem,
                                &labels,
                                n_trials,
                                rng::derive_seed(seed, "membership"),
                            )
                        })
                        .transpose()
                },
            )
        },
    );
    Ok(NuisanceModels {
        schema: schema.clone(),
        n_trials,
        specs: specs.clone(),
        mu1: mu1?,
        mu0: mu0?,
        pi: pi?,
        membership: membership?,
    })
}

/// Cross-fitted predictions for every eligible subject-trial row, in the
/// order of [`build_pooled`].
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub n_subjects: usize,
    pub n_trials: usize,
    pub policy: TruncationPolicy,
    pub subject: Vec<usize>,
    pub trial: Vec<usize>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    /// Fold of each subject.
    pub subject_fold: Vec<u8>,
    /// Fold whose subjects trained the models that predicted each row.
    pub trained_on: Vec<u8>,
    /// P_n(E_m = 1) computed on the full sample.
    pub eligible_fraction: Vec<f64>,
    /// mu(a, L) at the row's own trial.
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    /// mu_{m'}(a, L) for every m', row-major rows x M.
    pub mu1_grid: Option<Vec<f64>>,
    pub mu0_grid: Option<Vec<f64>>,
    /// Untruncated propensity predictions.
    pub pi_raw: Vec<f64>,
    /// Propensity clamped to [hard_floor, 1 - hard_floor].
    pub pi: Vec<f64>,
    /// Signed truncated weight A / pi - (1 - A) / (1 - pi).
    pub ipw: Vec<f64>,
    /// Membership probabilities p(T = m' | L), row-major rows x M.
    pub membership: Option<Vec<f64>>,
    /// Cap on p_j / p_m from ratio truncation.
    pub ratio_cap: f64,
}

impl NuisanceFit {
    pub fn len(&self) -> usize {
        self.subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject.is_empty()
    }

    pub fn mu_at(&self, r: usize, m: usize, arm: u8) -> f64 {
        if m == self.trial[r] {
            return if arm == 1 { self.mu1[r] } else { self.mu0[r] };
        }
        let grid = if arm == 1 { &self.mu1_grid } else { &self.mu0_grid };
        grid.as_ref().expect("counterfactual grid was not computed")[r * self.n_trials + m - 1]
    }

    /// Truncated density ratio xi_{j,m} for row `r`, which must be eligible at `m`.
    pub fn density_ratio(&self, j: usize, m: usize, r: usize) -> Result<f64> {
        if j == 0 || m == 0 || j > self.n_trials || m > self.n_trials {
            return Err(Error::Index(format!("trial pair ({j}, {m}) outside 1..{}", self.n_trials)));
        }
        if r >= self.len() {
            return Err(Error::Index(format!("row {r} out of range")));
        }
        if self.trial[r] != m {
            return Err(Error::Index(format!("row {r} belongs to trial {}, not {m}", self.trial[r])));
        }
        if j == m {
            return Ok(1.0);
        }
        let probs = self
            .membership
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("membership model was not fitted".into()))?;
        Ok(self.ratio_unchecked(probs, j, m, r))
    }

    pub(crate) fn ratio_unchecked(&self, probs: &[f64], j: usize, m: usize, r: usize) -> f64 {
        let row = &probs[r * self.n_trials..(r + 1) * self.n_trials];
        let odds = (row[j - 1] / row[m - 1].max(self.policy.hard_floor)).min(self.ratio_cap);
        odds * self.eligible_fraction[m - 1] / self.eligible_fraction[j - 1]
    }

    fn recompute_weights(&mut self) {
        let floor = self.policy.hard_floor;
        let ceiling = 1.0 / floor;
        let raw: Vec<f64> = (0..self.len())
            .map(|r| {
                let p = self.pi_raw[r];
                let w = if self.treatment[r] == 1 { 1.0 / p } else { 1.0 / (1.0 - p) };
                if w.is_nan() { ceiling } else { w.min(ceiling) }
            })
            .collect();
        let mut caps = [f64::INFINITY; 2];
        for arm in [0u8, 1] {
            let mut w: Vec<f64> =
                (0..self.len()).filter(|&r| self.treatment[r] == arm).map(|r| raw[r]).collect();
            if !w.is_empty() && self.policy.ps_quantile < 1.0 {
                caps[arm as usize] = quantile(&mut w, self.policy.ps_quantile);
            }
        }
        self.pi = self.pi_raw.iter().map(|p| p.clamp(floor, 1.0 - floor)).collect();
        self.ipw = (0..self.len())
            .map(|r| {
                let arm = self.treatment[r];
                let w = raw[r].min(caps[arm as usize]);
                if arm == 1 { w } else { -w }
            })
            .collect();
    }

    fn recompute_ratio_cap(&mut self) {
        self.ratio_cap = f64::INFINITY;
        let Some(probs) = &self.membership else { return };
        if self.policy.ratio_quantile >= 1.0 || self.n_trials < 2 {
            return;
        }
        let m_count = self.n_trials;
        let mut ratios = Vec::with_capacity(self.len() * (m_count - 1));
        for r in 0..self.len() {
            let row = &probs[r * m_count..(r + 1) * m_count];
            let m = self.trial[r];
            let denom = row[m - 1].max(self.policy.hard_floor);
            for j in 1..=m_count {
                if j != m {
                    ratios.push(row[j - 1] / denom);
                }
            }
        }
        if !ratios.is_empty() {
            self.ratio_cap = quantile(&mut ratios, self.policy.ratio_quantile);
        }
    }

    /// Replace outcome predictions with a known function `f(m', a, covariates)`.
    pub fn override_outcome(&mut self, panel: &TrialPanel, f: impl Fn(usize, u8, &[f64]) -> f64) {
        let pooled = build_pooled(panel);
        let m_count = self.n_trials;
        for r in 0..self.len() {
            let cov = pooled.covariates(r);
            self.mu1[r] = f(self.trial[r], 1, cov);
            self.mu0[r] = f(self.trial[r], 0, cov);
        }
        if let (Some(g1), Some(g0)) = (&mut self.mu1_grid, &mut self.mu0_grid) {
            for r in 0..pooled.len() {
                let cov = pooled.covariates(r);
                for m in 1..=m_count {
                    g1[r * m_count + m - 1] = f(m, 1, cov);
                    g0[r * m_count + m - 1] = f(m, 0, cov);
                }
            }
        }
    }

    /// Replace propensity predictions with a known function `f(m, covariates)`.
    pub fn override_propensity(&mut self, panel: &TrialPanel, f: impl Fn(usize, &[f64]) -> f64) {
        let pooled = build_pooled(panel);
        for r in 0..self.len() {
            self.pi_raw[r] = f(self.trial[r], pooled.covariates(r));
        }
        self.recompute_weights();
    }

    /// Replace membership probabilities with a known function writing p(T = . | L).
    pub fn override_membership(&mut self, panel: &TrialPanel, f: impl Fn(&[f64], &mut [f64])) {
        let pooled = build_pooled(panel);
        let m_count = self.n_trials;
        let mut probs = vec![0.0; self.len() * m_count];
        for r in 0..self.len() {
            f(pooled.covariates(r), &mut probs[r * m_count..(r + 1) * m_count]);
        }
        self.membership = Some(probs);
        self.recompute_ratio_cap();
    }

    /// A fit built entirely from known nuisance functions, with every
    /// subject in fold 0 (no cross-fitting involved).
    pub fn from_functions(
        panel: &TrialPanel,
        policy: TruncationPolicy,
        outcome: impl Fn(usize, u8, &[f64]) -> f64,
        propensity: impl Fn(usize, &[f64]) -> f64,
    ) -> Self {
        let pooled = build_pooled(panel);
        let rows = pooled.len();
        let m_count = panel.n_trials();
        let mut fit = NuisanceFit {
            n_subjects: panel.n_subjects(),
            n_trials: m_count,
            policy,
            subject: pooled.subject.clone(),
            trial: pooled.trial.clone(),
            treatment: pooled.treatment.clone(),
            outcome: pooled.outcome.clone(),
            subject_fold: vec![0; panel.n_subjects()],
            trained_on: vec![1; rows],
            eligible_fraction: panel.eligible_fractions(),
            mu1: vec![0.0; rows],
            mu0: vec![0.0; rows],
            mu1_grid: Some(vec![0.0; rows * m_count]),
            mu0_grid: Some(vec![0.0; rows * m_count]),
            pi_raw: vec![0.5; rows],
            pi: Vec::new(),
            ipw: Vec::new(),
            membership: None,
            ratio_cap: f64::INFINITY,
        };
        fit.override_outcome(panel, outcome);
        fit.override_propensity(panel, propensity);
        fit
    }
}

/// Two-fold cross-fitting: models trained on each fold predict the other.
pub fn predict_crossfit(
    panel: &TrialPanel,
    specs: &NuisanceSpecs,
    policy: &TruncationPolicy,
    options: CrossFitOptions,
    seed: u64,
) -> Result<NuisanceFit> {
    specs.validate()?;
    policy.validate()?;
    let split = split_subjects(panel.n_subjects(), seed)?;
    let pooled = build_pooled(panel);
    let in_fold = |f: u8| -> Vec<bool> { split.fold.iter().map(|&x| x == f).collect() };

    let (m0, m1) = rayon::join(
        || fit_pooled_nuisances(panel, &pooled, specs, &in_fold(0), options.membership, rng::derive_seed(seed, "fold0")),
        || fit_pooled_nuisances(panel, &pooled, specs, &in_fold(1), options.membership, rng::derive_seed(seed, "fold1")),
    );
    let models = [m0?, m1?];
    let rows = pooled.len();
    let m_count = panel.n_trials();
    let schema = panel.schema();
    let fm = FeatureMap::new(schema, m_count);

    let mut fit = NuisanceFit {
        n_subjects: panel.n_subjects(),
        n_trials: m_count,
        policy: *policy,
        subject: pooled.subject.clone(),
        trial: pooled.trial.clone(),
        treatment: pooled.treatment.clone(),
        outcome: pooled.outcome.clone(),
        subject_fold: split.fold.clone(),
        trained_on: pooled.subject.iter().map(|&i| 1 - split.fold[i]).collect(),
        eligible_fraction: panel.eligible_fractions(),
        mu1: vec![0.0; rows],
        mu0: vec![0.0; rows],
        mu1_grid: options.counterfactual_grid.then(|| vec![0.0; rows * m_count]),
        mu0_grid: options.counterfactual_grid.then(|| vec![0.0; rows * m_count]),
        pi_raw: vec![0.0; rows],
        pi: Vec::new(),
        ipw: Vec::new(),
        membership: options.membership.then(|| vec![0.0; rows * m_count]),
        ratio_cap: f64::INFINITY,
    };

    use rayon::prelude::*;
    // Per-row predictions; each row only reads its own covariates.
    struct RowOut {
        mu1: f64,
        mu0: f64,
        pi: f64,
        g1: Vec<f64>,
        g0: Vec<f64>,
        mem: Vec<f64>,
    }
    let outs: Vec<RowOut> = (0..rows)
        .into_par_iter()
        .map_init(Vec::new, |buf, r| {
            let model = &models[fit.trained_on[r] as usize];
            let (cov, m) = (pooled.covariates(r), pooled.trial[r]);
            fm.fill(schema, cov, m, &specs.outcome, buf);
            let mu1 = model.mu1.predict(buf);
            let mu0 = model.mu0.predict(buf);
            let mut g1 = Vec::new();
            let mut g0 = Vec::new();
            if options.counterfactual_grid {
                for mp in 1..=m_count {
                    if mp == m {
                        g1.push(mu1);
                        g0.push(mu0);
                    } else {
                        fm.fill(schema, cov, mp, &specs.outcome, buf);
                        g1.push(model.mu1.predict(buf));
                        g0.push(model.mu0.predict(buf));
                    }
                }
            }
            fm.fill(schema, cov, m, &specs.propensity, buf);
            let pi = model.pi.predict(buf);
            let mut mem = Vec::new();
            if let Some(mc) = &model.membership {
                fm.fill_covariates(schema, cov, buf);
                mem.resize(m_count, 0.0);
                mc.predict_into(buf, &mut mem);
            }
            RowOut { mu1, mu0, pi, g1, g0, mem }
        })
        .collect();

    for (r, o) in outs.into_iter().enumerate() {
        fit.mu1[r] = o.mu1;
        fit.mu0[r] = o.mu0;
        fit.pi_raw[r] = o.pi;
        if let (Some(g1), Some(g0)) = (&mut fit.mu1_grid, &mut fit.mu0_grid) {
            g1[r * m_count..(r + 1) * m_count].copy_from_slice(&o.g1);
            g0[r * m_count..(r + 1) * m_count].copy_from_slice(&o.g0);
        }
        if let Some(p) = &mut fit.membership {
            p[r * m_count..(r + 1) * m_count].copy_from_slice(&o.mem);
        }
    }
    fit.recompute_weights();
    fit.recompute_ratio_cap();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_data::{Covariate, EligibleRecord};
    use rand::Rng;

    fn panel(n: usize, seed: u64) -> TrialPanel {
        let schema = CovariateSchema::new(vec![Covariate::numeric("x"), Covariate::binary("b")]).unwrap();
        let mut rng = rng::stream(seed, "nuisance-test");
        let mut records = Vec::new();
        for _ in 0..n {
            for m in 1..=3 {
                let x: f64 = rng.random_range(-1.0..1.0);
                let b = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                let a = (rng.random::<f64>() < 0.3 + 0.2 * b) as u8;
                let y = x + 0.1 * m as f64 + a as f64 * (1.0 + b) + 0.1 * rng.random::<f64>();
                records.push(Some(EligibleRecord { covariates: vec![x, b], treatment: a, outcome: y }));
            }
        }
        TrialPanel::new(schema, (0..n).map(|i| format!("s{i:04}")).collect(), 3, records).unwrap()
    }

    #[test]
    fn crossfit_predictions_never_use_own_subject() {
        let p = panel(200, 1);
        let fit = predict_crossfit(&p, &NuisanceSpecs::parametric(), &Default::default(), CrossFitOptions::FULL, 7)
            .unwrap();
        for r in 0..fit.len() {
            assert_ne!(fit.trained_on[r], fit.subject_fold[fit.subject[r]]);
        }
        assert!(fit.pi.iter().all(|p| (0.01..=0.99).contains(p)));
        let probs = fit.membership.as_ref().unwrap();
        for r in 0..fit.len() {
            let s: f64 = probs[r * 3..r * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
        assert_eq!(fit.density_ratio(2, fit.trial[0], 0).is_ok(), true);
        assert_eq!(fit.density_ratio(fit.trial[0], fit.trial[0], 0).unwrap(), 1.0);
        assert!(fit.density_ratio(4, 1, 0).is_err());
    }

    #[test]
    fn truncated_weights_never_exceed_raw() {
        let p = panel(300, 2);
        let fit = predict_crossfit(&p, &NuisanceSpecs::parametric(), &Default::default(), CrossFitOptions::DIAGONAL, 3)
            .unwrap();
        for r in 0..fit.len() {
            let raw = if fit.treatment[r] == 1 { 1.0 / fit.pi_raw[r] } else { 1.0 / (1.0 - fit.pi_raw[r]) };
            assert!(fit.ipw[r].abs() <= raw + 1e-12);
        }
    }

    #[test]
    fn blob_round_trip() {
        let p = panel(100, 4);
        let pooled = build_pooled(&p);
        let train = vec![true; 100];
        let models = fit_pooled_nuisances(&p, &pooled, &NuisanceSpecs::parametric(), &train, true, 1).unwrap();
        let blob = models.to_blob().unwrap();
        assert_eq!(&blob[..5], b"CTNM1");
        let back = NuisanceModels::from_blob(&blob).unwrap();
        let cov = pooled.covariates(5);
        assert_eq!(back.predict_outcome(cov, 2, 1), models.predict_outcome(cov, 2, 1));
        assert!(NuisanceModels::from_blob(b"XXXX1{}").is_err());
    }

    #[test]
    fn quantile_type7() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&mut v, 0.5), 2.5);
        assert_eq!(quantile(&mut v, 1.0), 4.0);
    }
}
