//! The training loop, with exact checkpoint/resume at episode boundaries.
//!
//! A run directory holds the effective `config.toml`, the JSON-lines logs
//! (`losses`, `episodes`, `eval`), immutable policy snapshots under
//! `checkpoints/`, the final `policy.bin`, and `train_state.bin`, which carries
//! everything needed to continue bit-exactly: networks, optimizer moments,
//! replay contents, RNG state and the log lengths at save time.

use super::config::RunConfig;
use super::rollout::run_episode;
use super::{HarnessError, SCHEMA};
use crate::agent::replay::{share, SharedObs};
use crate::agent::{her_relabel, PreferenceVector, ReplayBuffer, Td3, Transition, UpdateStats};
use crate::metrics::{episode_metrics, EpisodeMetrics};
use crate::reward::{assemble, REWARD_DIM};
use crate::store::{ArrayData, Container};
use crate::world::{route::SCENARIO_COUNT, Action, TerminationReason, World, WorldConfig, OBSERVATION_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

const LOGS: [&str; 3] = ["losses.jsonl", "episodes.jsonl", "eval.jsonl"];

/// Preferences cycled through by the periodic evaluation.
pub fn eval_preferences() -> [PreferenceVector; 5] {
    [
        PreferenceVector::uniform(),
        PreferenceVector::one_hot(0),
        PreferenceVector::one_hot(1),
        PreferenceVector::one_hot(2),
        PreferenceVector::one_hot(3),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct LossWindow {
    updates: u64,
    critic: f64,
    actor: f64,
    actor_updates: u64,
    q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub schema: u32,
    pub env_steps: u64,
    pub updates: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub q_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema: u32,
    pub episode: u64,
    pub env_steps: u64,
    pub seed: u64,
    pub lambda: PreferenceVector,
    pub length: u32,
    pub returns: [f64; REWARD_DIM],
    pub termination: Option<TerminationReason>,
    pub route_completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema: u32,
    pub env_steps: u64,
    pub scenario: u32,
    pub seed: u64,
    pub lambda: PreferenceVector,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Serialize, Deserialize)]
struct Progress {
    env_steps: u64,
    episodes: u64,
    next_eval: u64,
    next_checkpoint: u64,
    window: LossWindow,
    log_lengths: [u64; 3],
}

pub struct Trainer {
    cfg: RunConfig,
    dir: PathBuf,
    agent: Td3,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    next_eval: u64,
    next_checkpoint: u64,
    window: LossWindow,
    logs: [BufWriter<File>; 3],
}

impl Trainer {
    /// Starts a fresh run in `dir`, which must not already hold a run.
    pub fn create(cfg: RunConfig, dir: &Path) -> Result<Self, HarnessError> {
        cfg.validate()?;
        if dir.join("config.toml").exists() {
            return Err(HarnessError::Config(format!(
                "{} already holds a run; resume it or choose another directory",
                dir.display()
            )));
        }
        fs::create_dir_all(dir.join("checkpoints")).map_err(HarnessError::io(dir))?;
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml()).map_err(HarnessError::io(&path))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agent = Td3::new(cfg.agent.clone(), OBSERVATION_DIM, &mut rng)?;
        let logs = open_logs(dir, None)?;
        Ok(Self {
            replay: ReplayBuffer::new(cfg.agent.replay_capacity),
            next_eval: cfg.train.eval_every,
            next_checkpoint: cfg.train.checkpoint_every,
            cfg,
            dir: dir.to_path_buf(),
            agent,
            rng,
            env_steps: 0,
            episodes: 0,
            window: LossWindow::default(),
            logs,
        })
    }

    /// Continues the run in `dir` from its last checkpoint. `total_steps`, when
    /// given, replaces the configured budget.
    pub fn resume(dir: &Path, total_steps: Option<u64>) -> Result<Self, HarnessError> {
        let mut cfg = RunConfig::load(&dir.join("config.toml"))?;
        if let Some(n) = total_steps {
            cfg.train.total_steps = n;
        }
        let state_path = dir.join("train_state.bin");
        if !state_path.exists() {
            return Err(HarnessError::Resume(format!("{} has no train_state.bin", dir.display())));
        }
        let mut c = Container::read(&state_path)?;
        let hash = c.meta["config_hash"].as_u64();
        if hash != Some(cfg.resume_hash()) {
            return Err(HarnessError::Resume("config.toml changed since the checkpoint was written".into()));
        }
        let progress: Progress = serde_json::from_value(c.meta["progress"].clone())?;
        let rng: ChaCha8Rng = serde_json::from_value(c.meta["rng"].clone())?;
        let replay = read_replay(&mut c, cfg.agent.replay_capacity)?;
        let agent = Td3::from_container(&mut c)?;
        let logs = open_logs(dir, Some(progress.log_lengths))?;
        if cfg.train.total_steps <= progress.env_steps {
            eprintln!("{} already has {} steps", dir.display(), progress.env_steps);
        }
        Ok(Self {
            cfg,
            dir: dir.to_path_buf(),
            agent,
            replay,
            rng,
            env_steps: progress.env_steps,
            episodes: progress.episodes,
            next_eval: progress.next_eval,
            next_checkpoint: progress.next_checkpoint,
            window: progress.window,
            logs,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Td3 {
        &self.agent
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// Trains until the step budget is spent, then writes `policy.bin`.
    pub fn run(&mut self) -> Result<(), HarnessError> {
        while self.env_steps < self.cfg.train.total_steps {
            self.advance()?;
        }
        let path = self.dir.join("policy.bin");
        self.agent.policy_container().write(&path)?;
        Ok(())
    }

    /// One episode plus any evaluation or checkpoint that falls due after it.
    /// Returns whether a checkpoint was written.
    pub fn advance(&mut self) -> Result<bool, HarnessError> {
        let total = self.cfg.train.total_steps;
        self.run_episode()?;
        if self.env_steps >= self.next_eval {
            self.evaluate()?;
            while self.next_eval <= self.env_steps {
                self.next_eval += self.cfg.train.eval_every;
            }
        }
        if self.env_steps >= self.next_checkpoint || self.env_steps >= total {
            while self.next_checkpoint <= self.env_steps {
                self.next_checkpoint += self.cfg.train.checkpoint_every;
            }
            self.checkpoint()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Collects one training episode, updating the agent after every step once learning has started.
    fn run_episode(&mut self) -> Result<(), HarnessError> {
        let t = self.cfg.train.clone();
        let world_seed: u64 = self.rng.random();
        let lambda = PreferenceVector::sample(&mut self.rng);
        let (mut world, obs) = World::reset(&self.cfg.world, world_seed)?;
        let mut features = obs.to_features();
        let mut s = share(&features);
        let mut episode = Vec::new();
        let mut returns = [0.0; REWARD_DIM];
        let termination = loop {
            let action = if self.env_steps < t.warmup_steps {
                Action::new(self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0))
            } else {
                let std = self.agent.config.exploration_noise;
                self.agent.select_action(&features, &lambda, std, &mut self.rng)?
            };
            let result = world.step(action)?;
            let r = assemble(&result.context, &self.cfg.reward)?.to_array();
            for (acc, v) in returns.iter_mut().zip(r) {
                *acc += v;
            }
            features = result.observation.to_features();
            let s_next = share(&features);
            let termination = result.outcome.termination;
            episode.push(Transition {
                s,
                a: result.context.action.to_array(),
                r,
                s_next: s_next.clone(),
                done: termination.is_some(),
                lambda,
            });
            s = s_next;
            self.env_steps += 1;
            if self.env_steps >= t.learning_starts && self.replay.len() >= self.agent.config.batch_size {
                let stats = self.agent.train_step(&self.replay, &mut self.rng)?;
                self.record_update(stats)?;
            }
            if termination.is_some() || self.env_steps >= t.total_steps {
                break termination;
            }
        };
        let length = episode.len() as u32;
        self.replay.extend(her_relabel(&episode, &mut self.rng, self.agent.config.her_k));
        let record = EpisodeRecord {
            schema: SCHEMA,
            episode: self.episodes,
            env_steps: self.env_steps,
            seed: world_seed,
            lambda,
            length,
            returns,
            termination,
            route_completion: world.route_completion(),
        };
        self.episodes += 1;
        write_line(&mut self.logs[1], &record)?;
        // Keep the logs readable line by line while the run is live.
        for (w, name) in self.logs.iter_mut().zip(LOGS) {
            w.flush().map_err(HarnessError::io(Path::new(name)))?;
        }
        Ok(())
    }

    fn record_update(&mut self, stats: UpdateStats) -> Result<(), HarnessError> {
        let w = &mut self.window;
        w.updates += 1;
        w.critic += stats.critic_loss;
        w.q += stats.q_mean;
        if let Some(a) = stats.actor_loss {
            w.actor += a;
            w.actor_updates += 1;
        }
        if w.updates < self.cfg.train.log_every {
            return Ok(());
        }
        let n = w.updates as f64;
        let record = LossRecord {
            schema: SCHEMA,
            env_steps: self.env_steps,
            updates: self.agent.critic_updates,
            critic_loss: w.critic / n,
            actor_loss: (w.actor_updates > 0).then(|| w.actor / w.actor_updates as f64),
            q_mean: w.q / n,
        };
        self.window = LossWindow::default();
        write_line(&mut self.logs[0], &record)
    }

    /// Greedy episodes over fixed scenarios and preferences; independent of the training RNG.
    fn evaluate(&mut self) -> Result<(), HarnessError> {
        let prefs = eval_preferences();
        for i in 0..self.cfg.train.eval_episodes {
            let scenario = (i as u32 % SCENARIO_COUNT) + 1;
            let lambda = prefs[i % prefs.len()];
            let world = WorldConfig {
                scenario: Some(scenario),
                ..self.cfg.world.clone()
            };
            let log = run_episode(&self.agent, &world, &self.cfg.reward, i as u64, lambda, true)?;
            let record = EvalRecord {
                schema: SCHEMA,
                env_steps: self.env_steps,
                scenario,
                seed: i as u64,
                lambda,
                metrics: episode_metrics(&log, &self.cfg.penalties)?,
            };
            write_line(&mut self.logs[2], &record)?;
        }
        Ok(())
    }

    /// Writes a policy snapshot and the resumable training state.
    fn checkpoint(&mut self) -> Result<(), HarnessError> {
        let mut log_lengths = [0u64; 3];
        for (i, (w, name)) in self.logs.iter_mut().zip(LOGS).enumerate() {
            let path = self.dir.join(name);
            w.flush().map_err(HarnessError::io(&path))?;
            log_lengths[i] = w.get_ref().metadata().map_err(HarnessError::io(&path))?.len();
        }
        let policy = self.agent.policy_container();
        let snap = self.dir.join("checkpoints").join(format!("policy_{:09}.bin", self.env_steps));
        policy.write(&snap)?;

        let mut c = policy;
        let progress = Progress {
            env_steps: self.env_steps,
            episodes: self.episodes,
            next_eval: self.next_eval,
            next_checkpoint: self.next_checkpoint,
            window: self.window,
            log_lengths,
        };
        let meta = c.meta.as_object_mut().expect("policy meta is an object");
        meta.insert("kind".into(), "train_state".into());
        meta.insert("config_hash".into(), self.cfg.resume_hash().into());
        meta.insert("progress".into(), serde_json::to_value(&progress)?);
        meta.insert("rng".into(), serde_json::to_value(&self.rng)?);
        meta.insert("replay_head".into(), self.replay.raw_parts().1.into());
        self.agent.write_training_state(&mut c);
        write_replay(&mut c, &self.replay);
        c.write(&self.dir.join("train_state.bin"))?;
        Ok(())
    }
}

fn open_logs(dir: &Path, lengths: Option<[u64; 3]>) -> Result<[BufWriter<File>; 3], HarnessError> {
    let open = |i: usize| -> Result<BufWriter<File>, HarnessError> {
        let path = dir.join(LOGS[i]);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(HarnessError::io(&path))?;
        match lengths {
            // Anything past the checkpoint belongs to work that will be redone.
            Some(l) => f.set_len(l[i]).map_err(HarnessError::io(&path))?,
            None => f.set_len(0).map_err(HarnessError::io(&path))?,
        }
        Ok(BufWriter::new(f))
    };
    Ok([open(0)?, open(1)?, open(2)?])
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, value: &T) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|source| HarnessError::Io {
        path: "log".into(),
        source,
    })
}

/// Observations are written once each; transitions refer to them by index.
fn write_replay(c: &mut Container, replay: &ReplayBuffer) {
    let (items, _) = replay.raw_parts();
    let mut index: HashMap<usize, u64> = HashMap::new();
    let mut obs: Vec<f32> = Vec::new();
    let mut id = |o: &SharedObs, obs: &mut Vec<f32>| -> u64 {
        let key = Arc::as_ptr(o) as *const f32 as usize;
        *index.entry(key).or_insert_with(|| {
            obs.extend_from_slice(o);
            (obs.len() / o.len().max(1) - 1) as u64
        })
    };
    let n = items.len();
    let (mut s, mut sn) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut a, mut r, mut l, mut done) = (Vec::with_capacity(2 * n), Vec::with_capacity(5 * n), Vec::with_capacity(4 * n), Vec::with_capacity(n));
    for t in items {
        s.push(id(&t.s, &mut obs));
        sn.push(id(&t.s_next, &mut obs));
        a.extend_from_slice(&t.a);
        r.extend_from_slice(&t.r);
        l.extend_from_slice(&t.lambda.as_array());
        done.push(t.done as u64);
    }
    c.push("replay.obs", ArrayData::F32(obs));
    c.push("replay.s", ArrayData::U64(s));
    c.push("replay.s_next", ArrayData::U64(sn));
    c.push_f64("replay.a", a);
    c.push_f64("replay.r", r);
    c.push_f64("replay.lambda", l);
    c.push("replay.done", ArrayData::U64(done));
}

fn read_replay(c: &mut Container, capacity: usize) -> Result<ReplayBuffer, HarnessError> {
    let bad = |m: &str| HarnessError::Resume(format!("replay: {m}"));
    let head = c.meta["replay_head"].as_u64().ok_or_else(|| bad("missing head"))? as usize;
    let flat = c.take_f32("replay.obs")?;
    if flat.len() % OBSERVATION_DIM != 0 {
        return Err(bad("observation table has the wrong width"));
    }
    let table: Vec<SharedObs> = flat.chunks(OBSERVATION_DIM).map(Arc::from).collect();
    let s = c.take_u64("replay.s")?;
    let sn = c.take_u64("replay.s_next")?;
    let a = c.take_f64("replay.a")?;
    let r = c.take_f64("replay.r")?;
    let l = c.take_f64("replay.lambda")?;
    let done = c.take_u64("replay.done")?;
    let n = s.len();
    if sn.len() != n || a.len() != 2 * n || r.len() != REWARD_DIM * n || l.len() != 4 * n || done.len() != n {
        return Err(bad("array lengths disagree"));
    }
    let get = |i: u64| table.get(i as usize).cloned().ok_or_else(|| bad("observation index out of range"));
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        items.push(Transition {
            s: get(s[i])?,
            a: [a[2 * i], a[2 * i + 1]],
            r: std::array::from_fn(|k| r[REWARD_DIM * i + k]),
            s_next: get(sn[i])?,
            done: done[i] != 0,
            lambda: PreferenceVector::new(std::array::from_fn(|k| l[4 * i + k])).map_err(|e| bad(&e.to_string()))?,
        });
    }
    ReplayBuffer::from_raw(capacity, items, head).ok_or_else(|| bad("inconsistent capacity or head"))
}
