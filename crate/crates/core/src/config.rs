//! Experiment configuration.
//!
//! Stored as TOML. Every field has a default, so an empty file is a valid
//! configuration that reproduces the reference hyperparameters:
//!
//! ```toml
//! master_seed = 0
//! variants = ["mbrl", "mfrl"]
//! scenarios = ["january_like", "april_like"]
//! output_dir = "runs"
//!
//! [episodes]
//! task1 = 30
//! task2 = 30
//! task3 = 5
//!
//! [training]
//! gamma = 0.99
//! lr_actor = 0.00005
//! lr_critic = 0.0002
//! batch_size = 1024
//! real_buffer_size = 35000
//! synthetic_buffer_size = 35000
//! hypernet_lr = 0.0001
//! hypernet_buffer_size = 4000
//! policy_update_every = 2
//! beta = 0.1
//! steps_per_episode = 1344
//! synthetic_per_step = 10
//! ensemble_models = 100
//! ```
//!
//! plus the `[sac]`, `[model]`, `[env]` and `[metrics]` sections below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dyna::Variant;
use crate::envsim::{RcParams, Scenario, TaskSpec, WeatherSource, WeatherTable, ZoneEnv};
use crate::error::{Error, Result};
use crate::hyperworld::HypernetSettings;
use crate::sac::{ActionGrid, SacSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub variants: Vec<Variant>,
    pub scenarios: Vec<Scenario>,
    pub output_dir: PathBuf,
    pub episodes: EpisodeBudget,
    pub training: Training,
    pub sac: SacSection,
    pub model: ModelSection,
    pub env: EnvSection,
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            variants: vec![Variant::Mbrl, Variant::Mfrl],
            scenarios: Scenario::ALL.to_vec(),
            output_dir: PathBuf::from("runs"),
            episodes: EpisodeBudget::default(),
            training: Training::default(),
            sac: SacSection::default(),
            model: ModelSection::default(),
            env: EnvSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeBudget {
    pub task1: usize,
    pub task2: usize,
    pub task3: usize,
}

impl Default for EpisodeBudget {
    fn default() -> Self {
        Self {
            task1: 30,
            task2: 30,
            task3: 5,
        }
    }
}

/// The reference training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub real_buffer_size: usize,
    pub synthetic_buffer_size: usize,
    pub hypernet_lr: f64,
    pub hypernet_buffer_size: usize,
    pub policy_update_every: u64,
    pub beta: f64,
    pub steps_per_episode: usize,
    pub synthetic_per_step: usize,
    pub ensemble_models: usize,
}

impl Default for Training {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr_actor: 0.00005,
            lr_critic: 0.0002,
            batch_size: 1024,
            real_buffer_size: 35000,
            synthetic_buffer_size: 35000,
            hypernet_lr: 0.0001,
            hypernet_buffer_size: 4000,
            policy_update_every: 2,
            beta: 0.1,
            steps_per_episode: 1344,
            synthetic_per_step: 10,
            ensemble_models: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub tau: f64,
    pub lr_entropy: f64,
    pub initial_entropy_coeff: f64,
    pub hidden: Vec<usize>,
    pub action_levels: ActionGrid,
}

impl Default for SacSection {
    fn default() -> Self {
        Self {
            tau: 0.005,
            lr_entropy: 0.0002,
            initial_entropy_coeff: 0.1,
            hidden: vec![64, 64],
            action_levels: ActionGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hypernet_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub noise_sigma: f64,
    /// Share of each SAC batch drawn from real experience (model-based runs).
    pub real_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let h = HypernetSettings::default();
        Self {
            hypernet_hidden: h.hidden,
            target_hidden: h.target_hidden,
            noise_dim: h.noise_dim,
            noise_sigma: h.noise_sigma,
            real_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub weather_noise_sigma: f64,
    /// Optional `time_s,temp_c` table replacing the synthetic weather.
    pub weather_file: Option<PathBuf>,
    pub ua: f64,
    pub capacitance: f64,
    pub q_max: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let rc = RcParams::default();
        Self {
            weather_noise_sigma: 0.5,
            weather_file: None,
            ua: rc.ua,
            capacitance: rc.capacitance,
            q_max: rc.q_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Emit an intra-episode row every this many steps (0 = episode ends only).
    pub log_interval: usize,
    /// Record elapsed wall-clock seconds. Off by default so metrics files are
    /// byte-reproducible.
    pub wall_clock: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            log_interval: 96,
            wall_clock: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0..=1.0).contains(&t.gamma) {
            return fail("training.gamma must be in [0, 1]");
        }
        for (name, lr) in [
            ("training.lr_actor", t.lr_actor),
            ("training.lr_critic", t.lr_critic),
            ("training.hypernet_lr", t.hypernet_lr),
            ("sac.lr_entropy", self.sac.lr_entropy),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if t.batch_size == 0
            || t.steps_per_episode == 0
            || t.ensemble_models == 0
            || t.policy_update_every == 0
        {
            return fail("batch_size, steps_per_episode, ensemble_models and policy_update_every must be positive");
        }
        if t.real_buffer_size == 0 || t.synthetic_buffer_size == 0 || t.hypernet_buffer_size == 0 {
            return fail("buffer sizes must be positive");
        }
        if !(t.beta >= 0.0 && t.beta.is_finite()) {
            return fail("training.beta must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.model.real_fraction) {
            return fail("model.real_fraction must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.sac.tau) {
            return fail("sac.tau must be in [0, 1]");
        }
        if !(self.sac.initial_entropy_coeff > 0.0 && self.sac.initial_entropy_coeff.is_finite()) {
            return fail("sac.initial_entropy_coeff must be positive");
        }
        if !(self.model.noise_sigma >= 0.0 && self.model.noise_sigma.is_finite()) {
            return fail("model.noise_sigma must be finite and non-negative");
        }
        if self.env.ua <= 0.0 || self.env.capacitance <= 0.0 || self.env.q_max < 0.0 {
            return fail("env.ua and env.capacitance must be positive, env.q_max non-negative");
        }
        if self.variants.is_empty() || self.scenarios.is_empty() {
            return fail("at least one variant and one scenario are required");
        }
        Ok(())
    }

    pub fn episodes_for(&self, task: TaskSpec) -> usize {
        match task.id() {
            1 => self.episodes.task1,
            2 => self.episodes.task2,
            _ => self.episodes.task3,
        }
    }

    pub fn sac_settings(&self) -> SacSettings {
        SacSettings {
            gamma: self.training.gamma,
            tau: self.sac.tau,
            lr_actor: self.training.lr_actor,
            lr_critic: self.training.lr_critic,
            lr_entropy: self.sac.lr_entropy,
        }
    }

    pub fn hypernet_settings(&self) -> HypernetSettings {
        HypernetSettings {
            hidden: self.model.hypernet_hidden.clone(),
            target_hidden: self.model.target_hidden.clone(),
            noise_dim: self.model.noise_dim,
            noise_sigma: self.model.noise_sigma,
        }
    }

    pub fn zone_env(&self) -> Result<ZoneEnv> {
        let weather = match &self.env.weather_file {
            Some(path) => WeatherSource::Table(WeatherTable::load(path)?),
            None => WeatherSource::Synthetic {
                noise_sigma: self.env.weather_noise_sigma,
            },
        };
        Ok(ZoneEnv {
            rc: RcParams {
                ua: self.env.ua,
                capacitance: self.env.capacitance,
                q_max: self.env.q_max,
            },
            weather,
            episode_steps: self.training.steps_per_episode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 123;
        cfg.training.lr_actor = 3.3e-5;
        cfg.env.weather_file = Some(PathBuf::from("w.csv"));
        cfg.sac.action_levels = ActionGrid::uniform(3);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let err =
            ExperimentConfig::parse("master_seed = 1\n[training]\ngamma = \"high\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let err = ExperimentConfig::parse("[training]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ExperimentConfig::parse("[model]\nreal_fraction = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("[training]\nbatch_size = 0\n").is_err());
        assert!(ExperimentConfig::parse("[sac]\naction_levels = [0.5, 0.1]\n").is_err());
        assert!(ExperimentConfig::parse("variants = []\n").is_err());
    }
}
