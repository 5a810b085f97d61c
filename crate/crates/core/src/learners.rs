//! Nuisance learner families: ridge least squares, ridge logistic
//! regression (IRLS), random forests on variance reduction, and a constant
//! predictor used for deliberate misspecification.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Learner configuration.  The `family` tag selects the model class; the
/// remaining keys are its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    Linear {
        #[serde(default)]
        ridge: f64,
        /// Encode the trial index as a factor instead of a numeric covariate.
        #[serde(default)]
        trial_as_factor: bool,
    },
    Logistic {
        #[serde(default = "default_logistic_ridge")]
        ridge: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default)]
        trial_as_factor: bool,
    },
    TreeEnsemble(ForestParams),
    MultinomialTreeEnsemble(ForestParams),
    Constant,
}

fn default_logistic_ridge() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    #[serde(default = "default_num_trees")]
    pub num_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    /// Features tried per split; `None` means floor(sqrt(p)).
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default = "default_sample_fraction")]
    pub sample_fraction: f64,
}

fn default_num_trees() -> usize {
    500
}
fn default_max_depth() -> usize {
    10
}
fn default_min_leaf() -> usize {
    5
}
fn default_sample_fraction() -> f64 {
    1.0
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: default_num_trees(),
            max_depth: default_max_depth(),
            min_leaf: default_min_leaf(),
            mtry: None,
            sample_fraction: default_sample_fraction(),
        }
    }
}

impl ForestParams {
    pub fn with_depth(num_trees: usize, max_depth: usize) -> Self {
        Self { num_trees, max_depth, ..Self::default() }
    }
}

/// Which nuisance a learner is being configured for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Outcome,
    Propensity,
    Membership,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Outcome => "outcome",
            Role::Propensity => "propensity",
            Role::Membership => "membership",
        }
    }
}

impl LearnerSpec {
    pub fn linear() -> Self {
        LearnerSpec::Linear { ridge: 0.0, trial_as_factor: false }
    }

    pub fn logistic() -> Self {
        LearnerSpec::Logistic {
            ridge: default_logistic_ridge(),
            max_iter: default_max_iter(),
            trial_as_factor: false,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            LearnerSpec::Linear { .. } => "linear",
            LearnerSpec::Logistic { .. } => "logistic",
            LearnerSpec::TreeEnsemble(_) => "tree_ensemble",
            LearnerSpec::MultinomialTreeEnsemble(_) => "multinomial_tree_ensemble",
            LearnerSpec::Constant => "constant",
        }
    }

    pub fn trial_as_factor(&self) -> bool {
        match self {
            LearnerSpec::Linear { trial_as_factor, .. }
            | LearnerSpec::Logistic { trial_as_factor, .. } => *trial_as_factor,
            _ => false,
        }
    }

    /// Check hyperparameter ranges and that the family suits the role.
    pub fn validate(&self, role: Role) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("{} learner: {msg}", role.name())));
        let compatible = matches!(
            (role, self),
            (_, LearnerSpec::Constant)
                | (Role::Outcome, LearnerSpec::Linear { .. } | LearnerSpec::TreeEnsemble(_))
                | (Role::Propensity, LearnerSpec::Logistic { .. } | LearnerSpec::TreeEnsemble(_))
                | (
                    Role::Membership,
                    LearnerSpec::Logistic { .. }
                        | LearnerSpec::TreeEnsemble(_)
                        | LearnerSpec::MultinomialTreeEnsemble(_)
                )
        );
        if !compatible {
            return bad(format!("family `{}` cannot be used for this role", self.family()));
        }
        match self {
            LearnerSpec::Linear { ridge, .. } if !(*ridge >= 0.0 && ridge.is_finite()) => {
                bad(format!("ridge must be a finite nonnegative number, got {ridge}"))
            }
            LearnerSpec::Logistic { ridge, max_iter, .. } => {
                if !(*ridge >= 0.0 && ridge.is_finite()) {
                    bad(format!("ridge must be a finite nonnegative number, got {ridge}"))
                } else if *max_iter == 0 {
                    bad("max_iter must be at least 1".into())
                } else {
                    Ok(())
                }
            }
            LearnerSpec::TreeEnsemble(p) | LearnerSpec::MultinomialTreeEnsemble(p) => {
                if p.num_trees == 0 {
                    bad("num_trees must be at least 1".into())
                } else if p.max_depth == 0 {
                    bad("max_depth must be at least 1".into())
                } else if p.min_leaf == 0 {
                    bad("min_leaf must be at least 1".into())
                } else if p.mtry == Some(0) {
                    bad("mtry must be at least 1".into())
                } else if !(p.sample_fraction > 0.0 && p.sample_fraction <= 1.0) {
                    bad(format!("sample_fraction must lie in (0, 1], got {}", p.sample_fraction))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn new(p: usize) -> Self {
        Self { n: 0, p, data: Vec::new() }
    }

    pub fn with_capacity(p: usize, rows: usize) -> Self {
        Self { n: 0, p, data: Vec::with_capacity(p * rows) }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.p);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

/// Column centering and scaling; zero-variance columns are marked inactive.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
}

impl Standardizer {
    fn fit(x: &Design) -> Self {
        let n = x.n as f64;
        let mut center = vec![0.0; x.p];
        for i in 0..x.n {
            for (c, v) in center.iter_mut().zip(x.row(i)) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut ss = vec![0.0; x.p];
        for i in 0..x.n {
            for ((s, v), c) in ss.iter_mut().zip(x.row(i)).zip(&center) {
                *s += (v - c) * (v - c);
            }
        }
        let scale: Vec<f64> = ss.iter().map(|s| (s / n).sqrt()).collect();
        let active = (0..x.p)
            .filter(|&k| scale[k] > 1e-12 * (1.0 + center[k].abs()))
            .collect();
        Self { center, scale, active }
    }

    fn transform(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.active.iter().map(|&k| (row[k] - self.center[k]) / self.scale[k]));
    }
}

fn singular(model: &str) -> Error {
    Error::SingularDesign { model: model.to_string() }
}

/// Reject a Gram matrix whose condition number is numerically infinite.
fn check_conditioning(g: &DMatrix<f64>, model: &str) -> Result<()> {
    if g.nrows() == 0 {
        return Ok(());
    }
    let eig = g.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(singular(model));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    std: Standardizer,
    intercept: f64,
    coef: Vec<f64>,
}

impl LinearModel {
    pub fn fit(x: &Design, y: &[f64], ridge: f64) -> Result<Self> {
        if x.n == 0 {
            return Err(Error::Fit { model: "linear".into(), reason: "no training rows".into() });
        }
        let std = Standardizer::fit(x);
        let k = std.active.len();
        let ybar = y.iter().sum::<f64>() / x.n as f64;
        let mut g = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        let mut z = Vec::with_capacity(k);
        for i in 0..x.n {
            std.transform(x.row(i), &mut z);
            let r = y[i] - ybar;
            for a in 0..k {
                b[a] += z[a] * r;
                for c in 0..=a {
                    g[(a, c)] += z[a] * z[c];
                }
            }
        }
        for a in 0..k {
            for c in 0..a {
                g[(c, a)] = g[(a, c)];
            }
        }
        if ridge == 0.0 {
            check_conditioning(&g, "linear")?;
        }
        for a in 0..k {
            g[(a, a)] += ridge;
        }
        let coef = g.cholesky().ok_or_else(|| singular("linear"))?.solve(&b);
        Ok(Self { std, intercept: ybar, coef: coef.iter().cloned().collect() })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut s = self.intercept;
        for (j, &k) in self.std.active.iter().enumerate() {
            s += self.coef[j] * (row[k] - self.std.center[k]) / self.std.scale[k];
        }
        s
    }

    /// Intercept and slopes on the original feature scale (zero for inactive columns).
    pub fn coefficients(&self, p: usize) -> (f64, Vec<f64>) {
        let mut slopes = vec![0.0; p];
        let mut intercept = self.intercept;
        for (j, &k) in self.std.active.iter().enumerate() {
            slopes[k] = self.coef[j] / self.std.scale[k];
            intercept -= slopes[k] * self.std.center[k];
        }
        (intercept, slopes)
    }
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    std: Standardizer,
    /// Intercept first, then standardized slopes.
    beta: Vec<f64>,
}

impl LogisticModel {
    pub fn fit(x: &Design, y: &[f64], ridge: f64, max_iter: usize) -> Result<Self> {
        let std = Standardizer::fit(x);
        let k = std.active.len() + 1;
        let n = x.n;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut beta = vec![0.0; k];
        beta[0] = (ybar / (1.0 - ybar)).ln();

        let mut zs = Vec::with_capacity(n * k);
        let mut z = Vec::new();
        for i in 0..n {
            std.transform(x.row(i), &mut z);
            zs.push(1.0);
            zs.extend_from_slice(&z);
        }
        let eta = |beta: &[f64], i: usize| -> f64 {
            zs[i * k..(i + 1) * k].iter().zip(beta).map(|(a, b)| a * b).sum()
        };
        let objective = |beta: &[f64]| -> f64 {
            let mut ll = 0.0;
            for i in 0..n {
                let e = eta(beta, i);
                // log(1 + exp(e)) computed stably
                let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                ll += y[i] * e - softplus;
            }
            ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
        };

        let mut current = objective(&beta);
        for _ in 0..max_iter {
            let mut h = DMatrix::<f64>::zeros(k, k);
            let mut g = DVector::<f64>::zeros(k);
            for i in 0..n {
                let zi = &zs[i * k..(i + 1) * k];
                let p = expit(eta(&beta, i));
                let w = p * (1.0 - p);
                for a in 0..k {
                    g[a] += zi[a] * (y[i] - p);
                    for c in 0..=a {
                        h[(a, c)] += w * zi[a] * zi[c];
                    }
                }
            }
            for a in 0..k {
                for c in 0..a {
                    h[(c, a)] = h[(a, c)];
                }
            }
            for a in 1..k {
                g[a] -= ridge * beta[a];
                h[(a, a)] += ridge;
            }
            let step = h.cholesky().ok_or_else(|| singular("logistic"))?.solve(&g);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                let value = objective(&trial);
                if value >= current - 1e-12 * current.abs() {
                    beta = trial;
                    current = value;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let size = step.iter().fold(0.0_f64, |m, s| m.max(s.abs())) * t;
            if !accepted || size < 1e-9 {
                break;
            }
        }
        Ok(Self { std, beta })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut e = self.beta[0];
        for (j, &k) in self.std.active.iter().enumerate() {
            e += self.beta[j + 1] * (row[k] - self.std.center[k]) / self.std.scale[k];
        }
        expit(e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn grow<R: Rng>(x: &Design, y: &[f64], rows: Vec<usize>, params: &ForestParams, mtry: usize, rng: &mut R) -> Self {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, rows, 0usize)];
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        while let Some((id, rows, depth)) = stack.pop() {
            let n = rows.len() as f64;
            let sum: f64 = rows.iter().map(|&r| y[r]).sum();
            let mean = sum / n;
            let pure = rows.iter().all(|&r| y[r] == y[rows[0]]);
            if depth >= params.max_depth || rows.len() < 2 * params.min_leaf || pure {
                nodes[id] = Node::Leaf(mean);
                continue;
            }
            let mut best: Option<(f64, usize, f64)> = None;
            for f in sample(rng, x.p, mtry).into_iter() {
                pairs.clear();
                pairs.extend(rows.iter().map(|&r| (x.data[r * x.p + f], y[r])));
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left_sum = 0.0;
                for i in 0..pairs.len() - 1 {
                    left_sum += pairs[i].1;
                    let nl = i + 1;
                    if nl < params.min_leaf {
                        continue;
                    }
                    if pairs.len() - nl < params.min_leaf {
                        break;
                    }
                    if pairs[i].0 == pairs[i + 1].0 {
                        continue;
                    }
                    let nl = nl as f64;
                    let nr = n - nl;
                    let right_sum = sum - left_sum;
                    // maximizing this is minimizing the within-child sum of squares
                    let gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
                    if best.is_none_or(|b| gain > b.0) {
                        best = Some((gain, f, 0.5 * (pairs[i].0 + pairs[i + 1].0)));
                    }
                }
            }
            match best {
                Some((gain, feature, threshold)) if gain > sum * sum / n * (1.0 + 1e-12) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&row| x.data[row * x.p + feature] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[id] = Node::Split { feature, threshold, left, right: left + 1 };
                    stack.push((left, l, depth + 1));
                    stack.push((left + 1, r, depth + 1));
                }
                _ => nodes[id] = Node::Leaf(mean),
            }
        }
        Self { nodes }
    }
}

/// Bagged regression trees; on 0/1 targets the leaf means are class
/// probabilities and variance reduction coincides with Gini impurity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &Design, y: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
        if x.n == 0 {
            return Err(Error::Fit { model: "tree_ensemble".into(), reason: "no training rows".into() });
        }
        let mtry = params
            .mtry
            .unwrap_or_else(|| ((x.p as f64).sqrt().floor() as usize).max(1))
            .min(x.p);
        let draws = ((x.n as f64 * params.sample_fraction).round() as usize).max(1);
        let trees = (0..params.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::indexed_stream(seed, "tree", t as u64);
                let rows: Vec<usize> = (0..draws).map(|_| rng.random_range(0..x.n)).collect();
                Tree::grow(x, y, rows, params, mtry, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// A fitted scalar model: a regression function or a probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Forest(Forest),
    Constant { value: f64 },
}

impl Model {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.predict(row),
            Model::Logistic(m) => m.predict(row),
            Model::Forest(f) => f.predict(row),
            Model::Constant { value } => *value,
        }
    }
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

pub fn fit_regression(spec: &LearnerSpec, x: &Design, y: &[f64], seed: u64) -> Result<Model> {
    if x.n == 0 {
        return Err(Error::Fit { model: spec.family().into(), reason: "no training rows".into() });
    }
    Ok(match spec {
        LearnerSpec::Linear { ridge, .. } => Model::Linear(LinearModel::fit(x, y, *ridge)?),
        LearnerSpec::TreeEnsemble(p) => Model::Forest(Forest::fit(x, y, p, seed)?),
        LearnerSpec::Constant => Model::Constant { value: mean(y) },
        other => {
            return Err(Error::InvalidSpec(format!("`{}` is not a regression family", other.family())))
        }
    })
}

/// Fit P(y = 1 | x) for a 0/1 target.  A target without variation yields a
/// constant model.
pub fn fit_probability(spec: &LearnerSpec, x: &Design, y: &[f64], seed: u64) -> Result<Model> {
    if x.n == 0 {
        return Err(Error::Fit { model: spec.family().into(), reason: "no training rows".into() });
    }
    let ybar = mean(y);
    if ybar == 0.0 || ybar == 1.0 {
        return Ok(Model::Constant { value: ybar });
    }
    Ok(match spec {
        LearnerSpec::Logistic { ridge, max_iter, .. } => {
            Model::Logistic(LogisticModel::fit(x, y, *ridge, *max_iter)?)
        }
        LearnerSpec::TreeEnsemble(p) | LearnerSpec::MultinomialTreeEnsemble(p) => {
            Model::Forest(Forest::fit(x, y, p, seed)?)
        }
        LearnerSpec::Constant => Model::Constant { value: ybar },
        other => {
            return Err(Error::InvalidSpec(format!("`{}` is not a classification family", other.family())))
        }
    })
}

/// Multiclass probabilities via one-vs-rest models renormalized per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiClassModel {
    classes: Vec<Model>,
}

impl MultiClassModel {
    pub fn fit(spec: &LearnerSpec, x: &Design, labels: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        let classes = (0..n_classes)
            .map(|c| {
                let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
                fit_probability(spec, x, &y, rng::derive_indexed(seed, c as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { classes })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn predict_into(&self, row: &[f64], out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.classes) {
            *o = m.predict(row).max(0.0);
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            out.fill(1.0 / out.len() as f64);
        }
    }
}
