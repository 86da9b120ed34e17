//! Experiment configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::{AnnotationConfig, SogmConfig};
use crate::plan::PlannerConfig;
use crate::pointmap::{IcpConfig, SlamConfig};
use crate::pointray::PointRayConfig;
use crate::predict::PredictorKind;
use crate::sim::{Scenario, SimConfig};
use crate::srm::SrmParams;
use crate::{Error, Result};

pub const ENV_OUTPUT_DIR: &str = "SOGMNAV_OUTPUT_DIR";
pub const ENV_THREADS: &str = "SOGMNAV_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub first: u64,
    pub count: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { first: 0, count: 20 }
    }
}

impl SeedConfig {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.first..self.first + self.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Predictors run by `simulate`, each over every seed.
    pub kinds: Vec<PredictorKind>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            kinds: vec![
                PredictorKind::NoPreds,
                PredictorKind::IgnoreDyn,
                PredictorKind::LinSogm,
                PredictorKind::GtSogm,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Worker threads for batches; 0 uses every core.
    pub threads: usize,
    /// World file; the bundled atrium when absent.
    pub world: Option<PathBuf>,
    pub seeds: SeedConfig,
    pub predictor: PredictorConfig,
    pub icp: IcpConfig,
    pub slam: SlamConfig,
    pub pointray: PointRayConfig,
    pub annotation: AnnotationConfig,
    pub sogm: SogmConfig,
    pub srm: SrmParams,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("out"),
            threads: 0,
            world: None,
            seeds: SeedConfig::default(),
            predictor: PredictorConfig::default(),
            icp: IcpConfig::default(),
            slam: SlamConfig::default(),
            pointray: PointRayConfig::default(),
            annotation: AnnotationConfig::default(),
            sogm: SogmConfig::default(),
            srm: SrmParams::default(),
            planner: PlannerConfig::default(),
            sim: SimConfig::default(),
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
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path`, or the defaults when `None`, then applies the
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = var(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(n) = var(ENV_THREADS) {
            self.threads = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_THREADS} must be a count, got {n:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sogm.validate()?;
        self.srm.validate().map_err(as_config)?;
        self.planner.validate()?;
        self.sim.validate()?;
        if self.predictor.kinds.is_empty() {
            return Err(Error::Config("predictor.kinds is empty".into()));
        }
        Ok(())
    }

    pub fn slam_config(&self) -> SlamConfig {
        SlamConfig {
            icp: self.icp.clone(),
            ..self.slam.clone()
        }
    }

    pub fn annotation_config(&self) -> AnnotationConfig {
        AnnotationConfig {
            pointray: self.pointray.clone(),
            ..self.annotation.clone()
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            sim: self.sim.clone(),
            planner: self.planner,
            srm: self.srm,
            sogm: self.sogm,
        }
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        format!("{:x}", h.finalize())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
