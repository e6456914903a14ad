//! Experiment orchestration: training runs, evaluation protocols and the live rollout server.

pub mod config;
pub mod dense;
pub mod qualitative;
pub mod rollout;
pub mod serve;
pub mod sweep;
pub mod train;

use crate::agent::AgentError;
use crate::metrics::{MetricsError, StatsError};
use crate::reward::RewardError;
use crate::store::StoreError;
use crate::world::WorldError;
use std::io;
use std::path::Path;
use thiserror::Error;

pub use config::{RunConfig, TrainConfig};
pub use rollout::run_episode;
pub use train::Trainer;

/// Version tag written into every JSON and JSON-lines record.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Loads a policy checkpoint for evaluation.
pub fn load_policy(path: &Path) -> Result<crate::agent::Td3, HarnessError> {
    let mut c = crate::store::Container::read(path)?;
    Ok(crate::agent::Td3::from_container(&mut c)?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io(path))
}
