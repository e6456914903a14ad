//! Preference-driven multi-objective TD3 agent.

pub mod preference;
pub mod replay;
pub mod td3;

pub use preference::{angle_loss, scalarize, Interpolator, PreferenceError, PreferenceVector, TableInterpolator, PREF_DIM};
pub use replay::{her_relabel, ReplayBuffer, Transition};
pub use td3::{AgentError, Batch, Td3, Td3Config, UpdateStats, ACTION_DIM};
