//! Weight sweep: vary one objective's weight stepwise and observe driving style.
//!
//! For each objective and weight level `w`, that objective gets exactly `w` and
//! the remaining `1 − w` is spread over the other three objectives by a flat
//! Dirichlet draw. Level 0 is then compared with level 1 by Welch's t-test.

use super::rollout::run_episode;
use super::{HarnessError, SCHEMA};
use crate::agent::{PreferenceVector, Td3, PREF_DIM};
use crate::metrics::{self, significance_stars, style_metrics, EpisodeLog, StyleMetrics, Summary};
use crate::reward::{RewardParams, OBJECTIVE_NAMES};
use crate::world::WorldConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

pub const STYLE_METRICS: [&str; 3] = ["mean_velocity", "mean_acceleration", "mean_jerk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    /// Preference indices (0 agg, 1 comfort, 2 speed, 3 eff).
    pub objectives: Vec<usize>,
    pub levels: Vec<f64>,
    pub episodes_per_level: usize,
    /// Seeds both the complementary weights and the episode worlds.
    pub seed: u64,
    pub world: WorldConfig,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            objectives: (0..PREF_DIM).collect(),
            levels: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            episodes_per_level: 20,
            seed: 0,
            world: WorldConfig::default(),
        }
    }
}

/// One planned evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub objective: usize,
    pub level: f64,
    pub lambda: PreferenceVector,
    pub world_seed: u64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.objectives.is_empty() || self.levels.is_empty() || self.episodes_per_level == 0 {
            return bad("sweep plan needs objectives, levels and episodes".into());
        }
        if let Some(o) = self.objectives.iter().find(|&&o| o >= PREF_DIM) {
            return bad(format!("objective index {o} out of range"));
        }
        if let Some(l) = self.levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return bad(format!("weight level {l} outside [0, 1]"));
        }
        self.world.validate()?;
        Ok(())
    }

    pub fn total_episodes(&self) -> usize {
        self.objectives.len() * self.levels.len() * self.episodes_per_level
    }

    /// All cases in a fixed order: objective, then level, then episode.
    pub fn cases(&self) -> Vec<SweepCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dirichlet = Dirichlet::new([1.0; PREF_DIM - 1]).expect("valid concentration");
        let mut out = Vec::with_capacity(self.total_episodes());
        for &objective in &self.objectives {
            for &level in &self.levels {
                for e in 0..self.episodes_per_level {
                    out.push(SweepCase {
                        objective,
                        level,
                        lambda: complementary(objective, level, dirichlet.sample(&mut rng)),
                        world_seed: self.seed.wrapping_mul(1_000_003).wrapping_add(e as u64),
                    });
                }
            }
        }
        out
    }
}

/// `w` on `objective`, `(1 − w)·rest` on the others in index order.
pub fn complementary(objective: usize, w: f64, rest: [f64; PREF_DIM - 1]) -> PreferenceVector {
    let mut out = [0.0; PREF_DIM];
    let mut others = rest.iter();
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if i == objective {
            w
        } else {
            (1.0 - w) * others.next().expect("three remaining weights")
        };
    }
    PreferenceVector::new(out).expect("complementary weights lie on the simplex")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEpisode {
    pub schema: u32,
    pub case: SweepCase,
    pub style: StyleMetrics,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: f64,
    pub mean_velocity: Summary,
    pub mean_acceleration: Summary,
    pub mean_jerk: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTest {
    pub objective: String,
    pub metric: String,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub stars: String,
    /// Mean at level 1 minus mean at level 0.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSweep {
    pub objective: String,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub episodes: usize,
    pub objectives: Vec<ObjectiveSweep>,
    /// Level 0 versus level 1 for every objective and metric; empty when either level is missing.
    pub tests: Vec<SweepTest>,
    /// Tests that could not be computed, with the reason.
    pub skipped: Vec<String>,
}

impl SweepReport {
    pub fn test(&self, objective: &str, metric: &str) -> Option<&SweepTest> {
        self.tests.iter().find(|t| t.objective == objective && t.metric == metric)
    }

    /// Aligned-column text form.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10} {:>5} {:>16} {:>16} {:>16}\n", "objective", "level", "velocity", "|accel|", "jerk");
        for o in &self.objectives {
            for l in &o.levels {
                let f = |x: &Summary| format!("{:.3} ± {:.3}", x.mean, x.std.unwrap_or(0.0));
                s += &format!(
                    "{:<10} {:>5.1} {:>16} {:>16} {:>16}\n",
                    o.objective,
                    l.level,
                    f(&l.mean_velocity),
                    f(&l.mean_acceleration),
                    f(&l.mean_jerk)
                );
            }
        }
        s += &format!("\n{:<10} {:<18} {:>9} {:>10} {:>5}\n", "objective", "metric", "t", "p", "sig");
        for t in &self.tests {
            s += &format!("{:<10} {:<18} {:>9.3} {:>10.2e} {:>5}\n", t.objective, t.metric, t.t, t.p, t.stars);
        }
        s
    }
}

fn metric_value(m: &StyleMetrics, name: &str) -> f64 {
    match name {
        "mean_velocity" => m.mean_velocity,
        "mean_acceleration" => m.mean_acceleration,
        _ => m.mean_jerk,
    }
}

/// Runs every case of the plan. Logs are handed to `sink` as they complete.
pub fn run_sweep(
    agent: &Td3,
    reward: &RewardParams,
    plan: &SweepPlan,
    mut sink: impl FnMut(&SweepCase, &EpisodeLog) -> Result<(), HarnessError>,
) -> Result<Vec<SweepEpisode>, HarnessError> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.total_episodes());
    for case in plan.cases() {
        let log = run_episode(agent, &plan.world, reward, case.world_seed, case.lambda, false)?;
        sink(&case, &log)?;
        out.push(SweepEpisode {
            schema: SCHEMA,
            case,
            style: style_metrics(&log)?,
            length: log.duration(),
        });
    }
    Ok(out)
}

/// Builds the report from per-episode records alone.
pub fn aggregate(episodes: &[SweepEpisode]) -> SweepReport {
    let mut objectives: Vec<usize> = episodes.iter().map(|e| e.case.objective).collect();
    objectives.sort_unstable();
    objectives.dedup();
    let mut report = SweepReport {
        schema: SCHEMA,
        episodes: episodes.len(),
        objectives: Vec::new(),
        tests: Vec::new(),
        skipped: Vec::new(),
    };
    for o in objectives {
        let name = OBJECTIVE_NAMES[o].to_string();
        let of_obj: Vec<&SweepEpisode> = episodes.iter().filter(|e| e.case.objective == o).collect();
        let mut levels: Vec<f64> = of_obj.iter().map(|e| e.case.level).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let values = |level: f64, metric: &str| -> Vec<f64> {
            of_obj
                .iter()
                .filter(|e| e.case.level == level)
                .map(|e| metric_value(&e.style, metric))
                .collect()
        };
        let summaries = levels
            .iter()
            .map(|&l| LevelSummary {
                level: l,
                mean_velocity: Summary::of(&values(l, "mean_velocity")).expect("level has episodes"),
                mean_acceleration: Summary::of(&values(l, "mean_acceleration")).expect("level has episodes"),
                mean_jerk: Summary::of(&values(l, "mean_jerk")).expect("level has episodes"),
            })
            .collect();
        if levels.contains(&0.0) && levels.contains(&1.0) {
            for metric in STYLE_METRICS {
                let (lo, hi) = (values(0.0, metric), values(1.0, metric));
                match metrics::welch_t_test(&hi, &lo) {
                    Ok(w) => report.tests.push(SweepTest {
                        objective: name.clone(),
                        metric: metric.to_string(),
                        t: w.t,
                        dof: w.dof,
                        p: w.p,
                        stars: significance_stars(w.p).to_string(),
                        difference: metrics::stats::mean(&hi) - metrics::stats::mean(&lo),
                    }),
                    Err(e) => report.skipped.push(format!("{name}/{metric}: {e}")),
                }
            }
        }
        report.objectives.push(ObjectiveSweep {
            objective: name,
            levels: summaries,
        });
    }
    report
}
