//! Deterministic evaluation episodes.

use super::HarnessError;
use crate::agent::{PreferenceVector, Td3};
use crate::metrics::{EpisodeLog, StepRecord, LOG_SCHEMA};
use crate::reward::{assemble, RewardParams};
use crate::world::{Observation, StepResult, World, WorldConfig};

/// One greedy episode under a fixed preference.
pub fn run_episode(
    agent: &Td3,
    world: &WorldConfig,
    reward: &RewardParams,
    seed: u64,
    lambda: PreferenceVector,
    record_q: bool,
) -> Result<EpisodeLog, HarnessError> {
    run_episode_with(agent, world, reward, seed, |_| lambda, record_q)
}

/// Like [`run_episode`], with the preference chosen per step.
pub fn run_episode_with(
    agent: &Td3,
    world_cfg: &WorldConfig,
    reward: &RewardParams,
    seed: u64,
    mut schedule: impl FnMut(u32) -> PreferenceVector,
    record_q: bool,
) -> Result<EpisodeLog, HarnessError> {
    let (mut world, mut obs) = World::reset(world_cfg, seed)?;
    let first = schedule(0);
    let mut log = EpisodeLog {
        schema: LOG_SCHEMA,
        scenario: world_cfg.scenario,
        seed,
        lambda: first,
        steps: Vec::new(),
        termination: None,
        route_completion: 0.0,
    };
    loop {
        let lambda = if world.steps() == 0 { first } else { schedule(world.steps()) };
        let (result, record) = greedy_step(agent, &mut world, &obs, reward, lambda, record_q)?;
        log.steps.push(record);
        obs = result.observation;
        if let Some(reason) = result.outcome.termination {
            log.termination = Some(reason);
            break;
        }
    }
    log.route_completion = world.route_completion();
    Ok(log)
}

/// Advances `world` one step with the greedy policy and returns the raw result with its log record.
pub fn greedy_step(
    agent: &Td3,
    world: &mut World,
    obs: &Observation,
    reward: &RewardParams,
    lambda: PreferenceVector,
    record_q: bool,
) -> Result<(StepResult, StepRecord), HarnessError> {
    let features = obs.to_features();
    let action = agent.act(&features, &lambda)?;
    let q = if record_q {
        Some(agent.q_values(&features, &lambda, action)?[0])
    } else {
        None
    };
    let result = world.step(action)?;
    let r = assemble(&result.context, reward)?;
    let record = StepRecord {
        step: world.steps(),
        state: result.state,
        action: result.context.action,
        reward: r,
        events: result.outcome.events,
        d_lat: result.context.d_lat,
        jerk: result.context.jerk,
        s: world.progress(),
        speed_limit: world.speed_limit(),
        lambda,
        q,
    };
    Ok((result, record))
}
