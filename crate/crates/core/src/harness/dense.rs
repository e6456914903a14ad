//! Dense-preference evaluation over a fixed simplex grid and the seven scenarios.

use super::rollout::run_episode;
use super::{HarnessError, SCHEMA};
use crate::agent::{preference::simplex_lattice, PreferenceVector, Td3, PREF_DIM};
use crate::metrics::{episode_metrics, EpisodeMetrics, PenaltyTable, Summary};
use crate::reward::RewardParams;
use crate::world::WorldConfig;
use serde::{Deserialize, Serialize};

pub const DENSE_GRID_SIZE: usize = 540;
/// Lattice resolution whose point count (560) is the smallest at or above the grid size.
pub const DENSE_GRID_RESOLUTION: usize = 13;

/// The evaluation grid: the `k/13` simplex lattice with 20 interior points
/// removed at even spacing, leaving exactly 540 points including all vertices.
pub fn dense_grid() -> Vec<PreferenceVector> {
    let lattice = simplex_lattice(DENSE_GRID_RESOLUTION);
    let interior: Vec<usize> = (0..lattice.len()).filter(|&i| lattice[i].iter().all(|&k| k > 0)).collect();
    let excess = lattice.len() - DENSE_GRID_SIZE;
    let stride = interior.len() / excess;
    let dropped: Vec<usize> = (0..excess).map(|j| interior[j * stride]).collect();
    lattice
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, k)| {
            let w: [f64; PREF_DIM] = std::array::from_fn(|j| k[j] as f64 / DENSE_GRID_RESOLUTION as f64);
            PreferenceVector::normalized(w).expect("lattice points are on the simplex")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseEvalPlan {
    pub scenarios: Vec<u32>,
    /// Episode seeds; each (scenario, preference) pair runs once per seed.
    pub seeds: Vec<u64>,
    /// Evaluate only the first `limit` grid points; `None` uses all 540.
    pub limit: Option<usize>,
    pub world: WorldConfig,
}

impl Default for DenseEvalPlan {
    fn default() -> Self {
        Self {
            scenarios: (1..=7).collect(),
            seeds: vec![0],
            limit: None,
            world: WorldConfig::default(),
        }
    }
}

impl DenseEvalPlan {
    pub fn preferences(&self) -> Vec<PreferenceVector> {
        let mut g = dense_grid();
        if let Some(n) = self.limit {
            g.truncate(n);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEpisode {
    pub schema: u32,
    /// Index of the checkpoint in the order given.
    pub checkpoint: usize,
    pub scenario: u32,
    pub seed: u64,
    pub lambda: PreferenceVector,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseReport {
    pub schema: u32,
    pub episodes: usize,
    pub driving_score: Summary,
    pub preference_score: Summary,
    pub preference_alignment: Option<Summary>,
    pub route_completion: Summary,
    pub collision_rate_vehicle: Summary,
    pub collision_rate_environment: Summary,
    pub lane_invasion_rate: Summary,
    pub lane_deviation: Summary,
}

impl DenseReport {
    pub fn to_text(&self) -> String {
        let row = |name: &str, s: &Summary| match s.std {
            Some(sd) => format!("{name:<28} {:>12.4} ± {:<10.4}\n", s.mean, sd),
            None => format!("{name:<28} {:>12.4}\n", s.mean),
        };
        let mut out = format!("{} episodes\n", self.episodes);
        out += &row("driving score (%)", &self.driving_score);
        out += &row("preference score", &self.preference_score);
        if let Some(pa) = &self.preference_alignment {
            out += &row("preference alignment (deg)", pa);
        }
        out += &row("route completion", &self.route_completion);
        out += &row("collision rate vehicle", &self.collision_rate_vehicle);
        out += &row("collision rate environment", &self.collision_rate_environment);
        out += &row("lane invasion rate", &self.lane_invasion_rate);
        out += &row("lane deviation (m)", &self.lane_deviation);
        out
    }
}

pub fn run_dense_eval(
    agents: &[Td3],
    reward: &RewardParams,
    penalties: &PenaltyTable,
    plan: &DenseEvalPlan,
    mut sink: impl FnMut(&DenseEpisode) -> Result<(), HarnessError>,
) -> Result<Vec<DenseEpisode>, HarnessError> {
    penalties.validate()?;
    plan.world.validate()?;
    let prefs = plan.preferences();
    let mut out = Vec::new();
    for (checkpoint, agent) in agents.iter().enumerate() {
        for &scenario in &plan.scenarios {
            let world = WorldConfig {
                scenario: Some(scenario),
                ..plan.world.clone()
            };
            for &seed in &plan.seeds {
                for &lambda in &prefs {
                    let log = run_episode(agent, &world, reward, seed, lambda, true)?;
                    let e = DenseEpisode {
                        schema: SCHEMA,
                        checkpoint,
                        scenario,
                        seed,
                        lambda,
                        metrics: episode_metrics(&log, penalties)?,
                    };
                    sink(&e)?;
                    out.push(e);
                }
            }
        }
    }
    Ok(out)
}

/// Mean ± std over all episodes; `None` for an empty input.
pub fn aggregate(episodes: &[DenseEpisode]) -> Option<DenseReport> {
    let col = |f: fn(&EpisodeMetrics) -> f64| -> Summary {
        Summary::of(&episodes.iter().map(|e| f(&e.metrics)).collect::<Vec<_>>()).expect("non-empty")
    };
    if episodes.is_empty() {
        return None;
    }
    let pa: Vec<f64> = episodes.iter().filter_map(|e| e.metrics.preference_alignment).collect();
    Some(DenseReport {
        schema: SCHEMA,
        episodes: episodes.len(),
        driving_score: col(|m| m.driving_score),
        preference_score: col(|m| m.preference_score),
        preference_alignment: Summary::of(&pa),
        route_completion: col(|m| m.route_completion),
        collision_rate_vehicle: col(|m| m.collision_rate_vehicle),
        collision_rate_environment: col(|m| m.collision_rate_environment),
        lane_invasion_rate: col(|m| m.lane_invasion_rate),
        lane_deviation: col(|m| m.lane_deviation),
    })
}
