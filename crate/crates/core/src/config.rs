//! Experiment configuration file (TOML). Every section is optional; missing
//! keys take the built-in defaults and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::ddqn::TrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scenario::ScenarioConfig;
use crate::schedulers::EvalSetup;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub bandwidths_hz: Vec<f64>,
    pub policies: Vec<String>,
    pub nearest_includes_rsu: bool,
    pub bootstrap_resamples: usize,
    /// Episodes per collaborator count for the observation table.
    pub obs_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            bandwidths_hz: vec![200e3, 300e3, 400e3, 500e3, 600e3],
            policies: vec!["nearest".into(), "rr".into(), "max_rate".into()],
            nearest_includes_rsu: false,
            bootstrap_resamples: 1000,
            obs_episodes: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub channel: ChannelParams,
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A missing or unreadable config file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.scenario.validate()?;
        self.env.validate()?;
        self.train.validate()?;
        if self.eval.bandwidths_hz.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("eval.bandwidths_hz entries must be > 0"));
        }
        Ok(())
    }

    /// Applies the master seed: training uses it directly, evaluation a
    /// derived stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn eval_setup(&self) -> EvalSetup {
        EvalSetup {
            params: self.channel.clone(),
            env_cfg: self.env.clone(),
            scenario_cfg: self.scenario.clone(),
            episodes: self.eval.episodes,
            seed: derive_seed(self.seed, "eval", 0),
            bootstrap_resamples: self.eval.bootstrap_resamples,
        }
    }
}
