//! Pipeline configuration, read from JSON.
//!
//! Every field has a default, unknown keys are rejected, and relative paths
//! resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ExperimentConfig, SamplerSettings};
use crate::stage1::Stage1Spec;
use crate::stage2::Stage2Spec;
use crate::synthetic::CensusConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub survey: Option<PathBuf>,
    pub areas: Option<PathBuf>,
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Extra edges joining disconnected components.
    pub bridges: Vec<(String, String)>,
    /// Give each degree-one area the neighbors of its sole neighbor.
    pub augment_singletons: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Stage-1 draws carried into stage 2.
    pub t_tilde: usize,
    pub stage1: SamplerSettings,
    pub stage2: SamplerSettings,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { t_tilde: 500, stage1: SamplerSettings::new(4, 1000, 1000), stage2: SamplerSettings::new(4, 3000, 3000) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Areas-file columns defining benchmark groupings, applied in order.
    pub systems: Vec<String>,
    pub p: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { systems: Vec::new(), p: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub census: CensusConfig,
    pub replicates: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { census: CensusConfig::default(), replicates: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub paths: Paths,
    /// Survey columns read as categorical factors.
    pub factors: Vec<String>,
    pub graph: GraphConfig,
    pub stage1: Stage1Spec,
    pub stage2: Stage2Spec,
    pub mcmc: McmcConfig,
    pub benchmark: BenchmarkConfig,
    pub simulate: SimulateConfig,
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.paths.survey, &mut self.paths.areas, &mut self.paths.edges].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.stage1.residual_sd > 0.0) {
            return bad("stage1.residual_sd must be positive");
        }
        if self.mcmc.t_tilde < 2 {
            return bad("mcmc.t_tilde must be at least 2");
        }
        for (name, s) in [("mcmc.stage1", &self.mcmc.stage1), ("mcmc.stage2", &self.mcmc.stage2)] {
            if s.chains == 0 || s.draws == 0 || s.thin == 0 || !(s.target_accept > 0.0 && s.target_accept < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} needs positive chains, draws and thin and target_accept in (0, 1)"
                )));
            }
        }
        let s1_draws = self.mcmc.stage1.chains * self.mcmc.stage1.draws / self.mcmc.stage1.thin;
        if s1_draws < self.mcmc.t_tilde {
            return Err(ConfigError::Invalid(format!(
                "mcmc.t_tilde {} exceeds the {s1_draws} stage-1 draws",
                self.mcmc.t_tilde
            )));
        }
        if !(self.benchmark.p > 0.0 && self.benchmark.p <= 1.0) {
            return bad("benchmark.p must lie in (0, 1]");
        }
        if self.simulate.replicates == 0 {
            return bad("simulate.replicates must be at least 1");
        }
        self.experiment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn survey_path(&self) -> Result<&Path, ConfigError> {
        required("survey", &self.paths.survey)
    }

    pub fn areas_path(&self) -> Result<&Path, ConfigError> {
        required("areas", &self.paths.areas)
    }
}

fn required<'a>(what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, ConfigError> {
    p.as_deref().ok_or_else(|| ConfigError::Invalid(format!("paths.{what} is not set")))
}
