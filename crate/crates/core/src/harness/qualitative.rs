//! One-hot preference rollouts on a fixed scenario, exported as per-meter series.

use super::rollout::run_episode;
use super::{HarnessError, SCHEMA};
use crate::agent::{PreferenceVector, Td3, PREF_DIM};
use crate::metrics::EpisodeLog;
use crate::reward::{RewardParams, OBJECTIVE_NAMES};
use crate::world::{TerminationReason, WorldConfig};
use serde::{Deserialize, Serialize};

/// Smoothing factor applied to every exported series.
pub const SMOOTHING: f64 = 0.6;
/// The T-intersection scenario.
pub const DEFAULT_SCENARIO: u32 = 1;

/// `y₀ = x₀`, `yₜ = β·yₜ₋₁ + (1 − β)·xₜ`.
pub fn exponential_smoothing(xs: &[f64], beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut prev = None;
    for &x in xs {
        let y = match prev {
            None => x,
            Some(p) => beta * p + (1.0 - beta) * x,
        };
        out.push(y);
        prev = Some(y);
    }
    out
}

/// Linear interpolation of `(t, y)` samples at `t = 0, 1, 2, …` up to `t.last()`.
///
/// `t` must be non-decreasing; repeated abscissae keep the first sample.
pub fn resample_unit(t: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(t.len(), y.len(), "abscissa and ordinate lengths differ");
    let Some(&end) = t.last() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut j = 0;
    let mut x = 0.0;
    while x <= end {
        while j + 1 < t.len() && t[j + 1] < x {
            j += 1;
        }
        let v = if j + 1 >= t.len() || x <= t[j] {
            y[j]
        } else {
            let span = t[j + 1] - t[j];
            if span <= 0.0 {
                y[j]
            } else {
                y[j] + (y[j + 1] - y[j]) * (x - t[j]) / span
            }
        };
        out.push(v);
        x += 1.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    /// Distance driven, meters; one entry per meter.
    pub distance: Vec<f64>,
    pub steering: Vec<f64>,
    pub throttle: Vec<f64>,
    pub velocity: Vec<f64>,
    pub lateral_acceleration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeRun {
    pub schema: u32,
    pub name: String,
    pub scenario: u32,
    pub lambda: PreferenceVector,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Bird's-eye ego positions at 10 Hz.
    pub trajectory: Vec<[f64; 2]>,
    /// Smoothed per-meter series.
    pub series: Series,
    pub peak_velocity: f64,
    pub peak_abs_lateral_acceleration: f64,
    pub termination: Option<TerminationReason>,
    pub route_completion: f64,
}

/// Resamples a log per meter of distance driven and smooths it.
pub fn series_from_log(log: &EpisodeLog, beta: f64) -> Series {
    let mut dist = Vec::with_capacity(log.steps.len() + 1);
    let mut d = 0.0;
    let mut last = None;
    for r in &log.steps {
        if let Some(p) = last {
            d += (r.state.position - p).norm();
        }
        last = Some(r.state.position);
        dist.push(d);
    }
    let pick = |f: fn(&crate::metrics::StepRecord) -> f64| -> Vec<f64> {
        let raw: Vec<f64> = log.steps.iter().map(f).collect();
        exponential_smoothing(&resample_unit(&dist, &raw), beta)
    };
    let n = resample_unit(&dist, &dist).len();
    Series {
        distance: (0..n).map(|i| i as f64).collect(),
        steering: pick(|r| r.state.steer_pos),
        throttle: pick(|r| r.state.throttle_pos),
        velocity: pick(|r| r.state.speed),
        lateral_acceleration: pick(|r| r.state.a_lat),
    }
}

pub fn run_qualitative(
    agent: &Td3,
    reward: &RewardParams,
    world: &WorldConfig,
    scenario: u32,
    seed: u64,
) -> Result<Vec<QualitativeRun>, HarnessError> {
    let world = WorldConfig {
        scenario: Some(scenario),
        ..world.clone()
    };
    let route = crate::world::route::scenario_route(scenario).map_err(crate::world::WorldError::from)?;
    let (start, goal) = (route.waypoints[0], *route.waypoints.last().expect("routes are non-empty"));
    let mut out = Vec::with_capacity(PREF_DIM);
    for i in 0..PREF_DIM {
        let lambda = PreferenceVector::one_hot(i);
        let log = run_episode(agent, &world, reward, seed, lambda, false)?;
        let series = series_from_log(&log, SMOOTHING);
        let peak = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        out.push(QualitativeRun {
            schema: SCHEMA,
            name: OBJECTIVE_NAMES[i].to_string(),
            scenario,
            lambda,
            start: [start.x, start.y],
            goal: [goal.x, goal.y],
            trajectory: log.steps.iter().map(|r| [r.state.position.x, r.state.position.y]).collect(),
            peak_velocity: peak(&series.velocity),
            peak_abs_lateral_acceleration: peak(&series.lateral_acceleration),
            series,
            termination: log.termination,
            route_completion: log.route_completion,
        });
    }
    Ok(out)
}
