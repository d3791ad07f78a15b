//! Declarative experiment configuration (TOML, schema version 1).
//!
//! Every table is optional and falls back to the defaults of the scenario;
//! a table that is present must spell out all of its keys. Unknown keys are
//! rejected everywhere. The fully resolved configuration is what each run
//! writes beside its outputs, so a run can be repeated from that file alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{BoundaryConditions, GridSpec};
use crate::kle::CovarianceSpec;
use crate::metrics::EvalSpec;
use crate::net::Architecture;
use crate::physics::{ConstraintSpec, SamplingSpec};
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

fn default_n_terms() -> usize {
    20
}

fn default_output_dir() -> String {
    "runs".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub boundary: BoundaryConditions,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    #[serde(default = "default_n_terms")]
    pub n_terms: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: GridSpec::default(),
            boundary: BoundaryConditions::default(),
            covariance: CovarianceSpec::default(),
            n_terms: default_n_terms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub eval: EvalSpec,
    /// Noise level (percent) applied to the observations of single runs.
    #[serde(default)]
    pub noise_percent: f64,
    /// Levels visited by the noise suite.
    pub noise_levels: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            eval: EvalSpec::default(),
            noise_percent: 0.0,
            noise_levels: vec![5.0, 10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsConfig {
    /// Master seeds for multi-seed aggregation; empty means the single
    /// top-level seed.
    pub seeds: Vec<u64>,
    pub sweep_epochs: Vec<usize>,
    pub replay_multipliers: [f64; 3],
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        ExperimentsConfig {
            seeds: Vec::new(),
            sweep_epochs: vec![1500, 1700, 1750, 1800, 2000],
            replay_multipliers: [8.1127, 0.28652, 1.0940],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub model: Architecture,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub experiments: ExperimentsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: default_output_dir(),
            scenario: ScenarioConfig::default(),
            sampling: SamplingSpec::default(),
            model: Architecture::default(),
            constraints: ConstraintSpec::default(),
            trainer: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            experiments: ExperimentsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let s = &self.scenario;
        s.grid.validate()?;
        s.covariance.validate()?;
        if s.n_terms == 0 || s.n_terms > 1000 {
            return Err(Error::Config(format!("scenario.n_terms must be in 1..=1000, got {}", s.n_terms)));
        }
        if (s.grid.length_x, s.grid.length_y) != (s.covariance.length_x, s.covariance.length_y) {
            return Err(Error::Config(
                "scenario.grid and scenario.covariance must share domain lengths".into(),
            ));
        }
        if !(s.boundary.left_head.is_finite() && s.boundary.right_head.is_finite()) {
            return Err(Error::Config("boundary heads must be finite".into()));
        }
        self.sampling.validate()?;
        self.model.validate()?;
        self.constraints.validate()?;
        self.trainer.validate()?;
        let m = &self.metrics;
        if !(m.noise_percent >= 0.0 && m.noise_percent.is_finite()) || m.noise_levels.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("noise levels must be finite and nonnegative".into()));
        }
        let e = &self.experiments;
        if e.sweep_epochs.contains(&0) {
            return Err(Error::Config("sweep epochs must be at least 1".into()));
        }
        if e.replay_multipliers.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("replay multipliers must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Master seeds for aggregated experiments.
    pub fn master_seeds(&self) -> Vec<u64> {
        if self.experiments.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.experiments.seeds.clone()
        }
    }
}
