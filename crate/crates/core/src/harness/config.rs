//! Run configuration, parsed from TOML and validated before anything runs.

use super::HarnessError;
use crate::agent::Td3Config;
use crate::metrics::PenaltyTable;
use crate::reward::RewardParams;
use crate::world::WorldConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Runs are written to `<output_dir>/seed_<seed>`.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub agent: Td3Config,
    pub train: TrainConfig,
    #[serde(default)]
    pub penalties: PenaltyTable,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Uniform random actions before the policy takes over.
    #[serde(default = "d_warmup")]
    pub warmup_steps: u64,
    /// Environment steps before the first gradient update.
    #[serde(default = "d_learning_starts")]
    pub learning_starts: u64,
    #[serde(default = "d_eval_every")]
    pub eval_every: u64,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "d_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Gradient updates averaged into one loss-log record.
    #[serde(default = "d_log_every")]
    pub log_every: u64,
}

fn d_warmup() -> u64 {
    5_000
}
fn d_learning_starts() -> u64 {
    1_000
}
fn d_eval_every() -> u64 {
    10_000
}
fn d_eval_episodes() -> usize {
    7
}
fn d_checkpoint_every() -> u64 {
    20_000
}
fn d_log_every() -> u64 {
    100
}

impl TrainConfig {
    pub fn with_steps(total_steps: u64) -> Self {
        Self {
            total_steps,
            warmup_steps: d_warmup(),
            learning_starts: d_learning_starts(),
            eval_every: d_eval_every(),
            eval_episodes: d_eval_episodes(),
            checkpoint_every: d_checkpoint_every(),
            log_every: d_log_every(),
        }
    }
}

impl RunConfig {
    pub fn new(seed: u64, total_steps: u64) -> Self {
        Self {
            seed,
            output_dir: default_output_dir(),
            world: WorldConfig::default(),
            reward: RewardParams::default(),
            agent: Td3Config::default(),
            train: TrainConfig::with_steps(total_steps),
            penalties: PenaltyTable::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.world.validate()?;
        self.agent.validate()?;
        self.penalties.validate()?;
        let reward = serde_json::to_value(&self.reward)?;
        for (name, v) in reward.as_object().into_iter().flatten() {
            if !v.as_f64().is_some_and(f64::is_finite) {
                return Err(HarnessError::Config(format!("reward.{name} must be finite")));
            }
        }
        let t = &self.train;
        for (name, v) in [
            ("train.total_steps", t.total_steps),
            ("train.eval_every", t.eval_every),
            ("train.checkpoint_every", t.checkpoint_every),
            ("train.log_every", t.log_every),
        ] {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("seed_{}", self.seed))
    }

    /// FNV-1a over the canonical JSON form, ignoring `train.total_steps` and
    /// `output_dir` so a finished run can be extended or moved.
    pub fn resume_hash(&self) -> u64 {
        let mut c = self.clone();
        c.train.total_steps = 0;
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        bytes
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}
