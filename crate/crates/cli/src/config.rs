//! Run configuration, read from TOML (or JSON with the same structure).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use caltrend_core::decomposition::Thresholding;
use caltrend_core::nuisance::{NuisanceSpecs, TruncationPolicy};
use caltrend_core::projection::{default_candidates, CandidateSpec, TrialWeights};
use caltrend_core::simulation::{
    application_schema, Coefficients, OutcomeModel, ScenarioSpec, ShiftRule,
};
use caltrend_core::trial_data::CovariateSchema;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; CALTREND_THREADS caps this further.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Render headline effects in percent.
    #[serde(default)]
    pub display_percent: bool,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationGrid>,
}

fn default_output() -> PathBuf {
    PathBuf::from("caltrend-output")
}

/// Where the panel comes from: a long-format CSV or a simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Covariate schema of `input`; defaults to the application schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CovariateSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub pool: PoolConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    /// Size of the synthetic pool when no CSV is given.
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { size: 20_000, csv: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub learners: NuisanceSpecs,
    pub truncation: TruncationPolicy,
    /// Empty means the default candidate list for the panel's trial count.
    pub candidates: Vec<CandidateSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub c: f64,
    /// Extra values of c reported in the selection summary.
    pub c_grid: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub bootstrap: usize,
    pub thresholding: Thresholding,
    /// Skip the cross-trial matrix, decomposition and test.
    pub skip_decomposition: bool,
    pub write_replicates: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            learners: NuisanceSpecs::default(),
            truncation: TruncationPolicy::default(),
            candidates: Vec::new(),
            weights: None,
            c: 0.25,
            c_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            alpha: 0.05,
            delta: 0.05,
            bootstrap: 2_000,
            thresholding: Thresholding::default(),
            skip_decomposition: false,
            write_replicates: false,
        }
    }
}

impl AnalysisConfig {
    pub fn candidates_for(&self, n_trials: usize) -> Vec<CandidateSpec> {
        if self.candidates.is_empty() {
            default_candidates(n_trials)
        } else {
            self.candidates.clone()
        }
    }

    pub fn weights_for(&self, n_trials: usize) -> TrialWeights {
        match &self.weights {
            Some(w) => TrialWeights(w.clone()),
            None => TrialWeights::uniform(n_trials),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.learners.validate()?;
        self.truncation.validate()?;
        if !(self.c >= 0.0 && self.c.is_finite()) || self.c_grid.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            bail!("c must be finite and nonnegative");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must lie in (0, 1), got {}", self.alpha);
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            bail!("delta must lie in (0, 0.5), got {}", self.delta);
        }
        if !self.skip_decomposition && self.bootstrap == 0 {
            bail!("bootstrap must be positive");
        }
        Ok(())
    }
}

/// Scenario grid for `simulate`: every (shift, outcome, n) combination,
/// `replicates` times each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationGrid {
    pub shifts: Vec<ShiftRule>,
    pub outcomes: Vec<OutcomeModel>,
    pub n: Vec<usize>,
    pub replicates: usize,
    pub n_trials: usize,
    pub sigma_y: f64,
    pub coefficients: Coefficients,
    /// Also write each simulated panel as CSV.
    pub write_panels: bool,
}

impl Default for SimulationGrid {
    fn default() -> Self {
        Self {
            shifts: ShiftRule::ALL.to_vec(),
            outcomes: OutcomeModel::ALL.to_vec(),
            n: vec![2_000],
            replicates: 10,
            n_trials: 36,
            sigma_y: 0.05,
            coefficients: Coefficients::default(),
            write_panels: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> anyhow::Result<Self> {
        let is_json = path.extension().is_some_and(|e| e == "json");
        let cfg: RunConfig = if is_json {
            serde_json::from_str(text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text, path)?;
        // relative data paths are taken relative to the configuration file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.data.pool.csv.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn schema(&self) -> CovariateSchema {
        self.data.schema.clone().unwrap_or_else(application_schema)
    }

    pub fn validate_estimate(&self) -> anyhow::Result<()> {
        self.analysis.validate()?;
        match (&self.data.input, &self.data.scenario) {
            (Some(p), None) => {
                if !p.exists() {
                    bail!("input file {} does not exist", p.display());
                }
            }
            (None, Some(_)) => {}
            (Some(_), Some(_)) => bail!("set either data.input or data.scenario, not both"),
            (None, None) => bail!("set data.input (a CSV panel) or data.scenario"),
        }
        if let Some(p) = &self.data.pool.csv {
            if !p.exists() {
                bail!("pool file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// Template with every default spelled out.
    pub fn template() -> Self {
        Self {
            seed: 1,
            threads: None,
            output: default_output(),
            display_percent: false,
            data: DataConfig {
                input: None,
                schema: None,
                scenario: Some(ScenarioSpec::new(ShiftRule::Linear, OutcomeModel::LinearEffectMod, 36, 5_000, 0)),
                pool: PoolConfig::default(),
            },
            analysis: AnalysisConfig { candidates: default_candidates(36), ..AnalysisConfig::default() },
            simulation: Some(SimulationGrid::default()),
        }
    }
}
