//! Driving and preference metrics computed from episode logs.

pub mod stats;

use crate::agent::{PreferenceVector, PREF_DIM};
use crate::reward::{RewardVector, REWARD_DIM};
use crate::world::{Action, EventSet, TerminationReason, VehicleState};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

pub use stats::{significance_stars, welch_t_test, StatsError, WelchResult};

pub const LOG_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("episode log is empty")]
    EmptyLog,
    #[error("no alignment samples")]
    NoSamples,
    #[error("zero-norm vector in alignment sample {0}")]
    ZeroVector(usize),
    #[error("penalty factor {name} = {value} is outside (0, 1]")]
    Penalty { name: &'static str, value: f64 },
    #[error("log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One 10 Hz step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub state: VehicleState,
    pub action: Action,
    pub reward: RewardVector,
    pub events: EventSet,
    pub d_lat: f64,
    pub jerk: [f64; 2],
    /// Arc length along the route, meters.
    pub s: f64,
    pub speed_limit: f64,
    pub lambda: PreferenceVector,
    /// First critic's Q-vector at this step, when the evaluator recorded it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<[f64; REWARD_DIM]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema: u32,
    pub scenario: Option<u32>,
    pub seed: u64,
    pub lambda: PreferenceVector,
    pub steps: Vec<StepRecord>,
    pub termination: Option<TerminationReason>,
    /// Fraction of the route completed, in [0, 1].
    pub route_completion: f64,
}

impl EpisodeLog {
    pub fn duration(&self) -> usize {
        self.steps.len()
    }

    pub fn counts(&self) -> InfractionCounts {
        let mut c = InfractionCounts::default();
        let mut speeding = false;
        let mut off_road = false;
        for r in &self.steps {
            c.vehicle_collision += r.events.collision_vehicle as u32;
            c.environment_collision += r.events.collision_environment as u32;
            c.lane_violation += r.events.lane_invasion as u32;
            if r.events.off_road && !off_road {
                c.lane_violation += 1;
            }
            off_road = r.events.off_road;
            let over = r.state.speed > r.speed_limit;
            if over && !speeding {
                c.speeding += 1;
            }
            speeding = over;
        }
        if matches!(
            self.termination,
            Some(TerminationReason::StepLimit | TerminationReason::Stagnation)
        ) {
            c.timeout = 1;
        }
        c
    }

    /// Total reward vector over the episode.
    pub fn returns(&self) -> [f64; REWARD_DIM] {
        let mut out = [0.0; REWARD_DIM];
        for r in &self.steps {
            for (o, v) in out.iter_mut().zip(r.reward.to_array()) {
                *o += v;
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> io::Result<()> {
        serde_json::to_writer(&mut *w, self)?;
        w.write_all(b"\n")
    }
}

pub fn read_logs<R: BufRead>(r: R) -> Result<Vec<EpisodeLog>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| MetricsError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InfractionCounts {
    pub vehicle_collision: u32,
    pub environment_collision: u32,
    pub timeout: u32,
    pub speeding: u32,
    pub lane_violation: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyTable {
    pub vehicle_collision: f64,
    pub environment_collision: f64,
    pub timeout: f64,
    pub speeding: f64,
    pub lane_violation: f64,
}

impl Default for PenaltyTable {
    fn default() -> Self {
        Self {
            vehicle_collision: 0.60,
            environment_collision: 0.65,
            timeout: 0.70,
            speeding: 0.90,
            lane_violation: 0.90,
        }
    }
}

impl PenaltyTable {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, value) in [
            ("vehicle_collision", self.vehicle_collision),
            ("environment_collision", self.environment_collision),
            ("timeout", self.timeout),
            ("speeding", self.speeding),
            ("lane_violation", self.lane_violation),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(MetricsError::Penalty { name, value });
            }
        }
        Ok(())
    }
}

/// DS = RC · Π p_i^{n_i}, in percent.
pub fn driving_score(route_completion: f64, counts: &InfractionCounts, p: &PenaltyTable) -> f64 {
    let factor = p.vehicle_collision.powi(counts.vehicle_collision as i32)
        * p.environment_collision.powi(counts.environment_collision as i32)
        * p.timeout.powi(counts.timeout as i32)
        * p.speeding.powi(counts.speeding as i32)
        * p.lane_violation.powi(counts.lane_violation as i32);
    100.0 * route_completion.clamp(0.0, 1.0) * factor
}

/// Collisions per step, as (vehicle, environment).
pub fn collision_rate(log: &EpisodeLog) -> Result<(f64, f64), MetricsError> {
    let t = nonempty(log)?;
    let c = log.counts();
    Ok((c.vehicle_collision as f64 / t, c.environment_collision as f64 / t))
}

pub fn lane_invasion_rate(log: &EpisodeLog) -> Result<f64, MetricsError> {
    let t = nonempty(log)?;
    Ok(log.steps.iter().filter(|r| r.events.lane_invasion).count() as f64 / t)
}

/// Mean absolute lateral offset from the route line, meters.
pub fn lane_deviation(log: &EpisodeLog) -> Result<f64, MetricsError> {
    let t = nonempty(log)?;
    Ok(log.steps.iter().map(|r| r.d_lat.abs()).sum::<f64>() / t)
}

/// Time mean of ω · r_pref.
pub fn preference_score(log: &EpisodeLog, omega: &[f64; PREF_DIM]) -> Result<f64, MetricsError> {
    let t = nonempty(log)?;
    let total: f64 = log
        .steps
        .iter()
        .map(|r| {
            let a = r.reward.to_array();
            (0..PREF_DIM).map(|i| omega[i] * a[i + 1]).sum::<f64>()
        })
        .sum();
    Ok(total / t)
}

/// Mean angle in degrees between ω and the preference part of Q.
pub fn preference_alignment(samples: &[(PreferenceVector, [f64; REWARD_DIM])]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let mut total = 0.0;
    for (i, (w, q)) in samples.iter().enumerate() {
        let qp = [q[1], q[2], q[3], q[4]];
        let angle = crate::agent::angle_loss(&w.as_array(), &qp).map_err(|_| MetricsError::ZeroVector(i))?;
        total += angle.to_degrees();
    }
    Ok(total / samples.len() as f64)
}

/// Alignment samples recorded in a log.
pub fn alignment_samples(log: &EpisodeLog) -> Vec<(PreferenceVector, [f64; REWARD_DIM])> {
    log.steps.iter().filter_map(|r| r.q.map(|q| (r.lambda, q))).collect()
}

/// Per-episode driving-style summary used by the weight sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleMetrics {
    pub mean_velocity: f64,
    pub mean_acceleration: f64,
    pub mean_jerk: f64,
}

pub fn style_metrics(log: &EpisodeLog) -> Result<StyleMetrics, MetricsError> {
    let t = nonempty(log)?;
    let mut m = StyleMetrics {
        mean_velocity: 0.0,
        mean_acceleration: 0.0,
        mean_jerk: 0.0,
    };
    for r in &log.steps {
        m.mean_velocity += r.state.speed;
        m.mean_acceleration += r.state.a_long.hypot(r.state.a_lat);
        m.mean_jerk += r.jerk[0].hypot(r.jerk[1]);
    }
    m.mean_velocity /= t;
    m.mean_acceleration /= t;
    m.mean_jerk /= t;
    Ok(m)
}

/// All per-episode metrics in one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub driving_score: f64,
    pub preference_score: f64,
    /// Absent when the log carries no Q samples.
    pub preference_alignment: Option<f64>,
    pub route_completion: f64,
    pub collision_rate_vehicle: f64,
    pub collision_rate_environment: f64,
    pub lane_invasion_rate: f64,
    pub lane_deviation: f64,
    pub duration: usize,
    pub counts: InfractionCounts,
}

pub fn episode_metrics(log: &EpisodeLog, penalties: &PenaltyTable) -> Result<EpisodeMetrics, MetricsError> {
    let (cv, ce) = collision_rate(log)?;
    let samples = alignment_samples(log);
    let counts = log.counts();
    Ok(EpisodeMetrics {
        driving_score: driving_score(log.route_completion, &counts, penalties),
        preference_score: preference_score(log, &log.lambda.as_array())?,
        preference_alignment: if samples.is_empty() {
            None
        } else {
            Some(preference_alignment(&samples)?)
        },
        route_completion: log.route_completion,
        collision_rate_vehicle: cv,
        collision_rate_environment: ce,
        lane_invasion_rate: lane_invasion_rate(log)?,
        lane_deviation: lane_deviation(log)?,
        duration: log.duration(),
        counts,
    })
}

fn nonempty(log: &EpisodeLog) -> Result<f64, MetricsError> {
    if log.steps.is_empty() {
        Err(MetricsError::EmptyLog)
    } else {
        Ok(log.steps.len() as f64)
    }
}

/// Mean and (sample) standard deviation; the deviation is absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            mean: stats::mean(xs),
            std: (xs.len() > 1).then(|| stats::std_dev(xs)),
            n: xs.len(),
        })
    }
}
