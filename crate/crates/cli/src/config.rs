//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use ratelab::gcc::{GccConfig, PopulationSpec};
use ratelab::learner::TrainHyper;
use ratelab::pipeline::CorpusSpec;
use ratelab::sim::SimConfig;
use ratelab::telemetry::{Normalizers, RewardParams, DEFAULT_DRIFT_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub horizon_ms: u64,
    pub safety_factor: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            horizon_ms: 1000,
            safety_factor: 0.95,
        }
    }
}

/// Everything a run depends on. The resolved copy is written next to the
/// run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Corpus generation and training both derive from it.
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub drift_threshold: f64,
    pub corpus: CorpusSpec,
    pub sim: SimConfig,
    pub gcc: GccConfig,
    /// Spread of the logging fleet around `gcc`.
    pub population: PopulationSpec,
    pub oracle: OracleParams,
    pub train: TrainHyper,
    pub normalizers: Normalizers,
    pub reward: RewardParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            out: PathBuf::from("out"),
            manifest: None,
            drift_threshold: DEFAULT_DRIFT_THRESHOLD,
            corpus: CorpusSpec::default(),
            sim: SimConfig::default(),
            gcc: GccConfig::default(),
            population: PopulationSpec::default(),
            oracle: OracleParams::default(),
            train: TrainHyper::default(),
            normalizers: Normalizers::default(),
            reward: RewardParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Writes the frozen copy into the output directory.
    pub fn freeze(&self) -> Result<PathBuf, CliError> {
        let path = self.out.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
