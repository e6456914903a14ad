//! Preference-conditioned multi-objective TD3 for personalized driving styles.

pub mod agent;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod reward;
pub mod store;
pub mod world;
