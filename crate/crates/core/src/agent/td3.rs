//! Preference-conditioned TD3 with twin vector-valued critics.
//!
//! The actor sees `s ⊕ λ` and emits `(steer, longitudinal)`; each critic sees
//! `s ⊕ λ ⊕ a` and predicts one value per reward component.

use super::preference::{angle_loss_with_grad, scalarize_weights, Interpolator, PreferenceError, PreferenceVector, PREF_DIM};
use super::replay::{ReplayBuffer, Transition};
use crate::nn::{soft_update, Activation, Adam, AdamConfig, Gradients, Mlp, NnError};
use crate::reward::REWARD_DIM;
use crate::store::{Container, StoreError};
use crate::world::Action;
use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("checkpoint does not match this agent: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub exploration_noise: f64,
    pub angle_coef_critic: f64,
    pub angle_coef_actor: f64,
    pub her_k: usize,
    pub replay_capacity: usize,
    pub interpolator: Interpolator,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            hidden: vec![250, 125],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            tau: 0.005,
            gamma: 0.99,
            batch_size: 256,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            angle_coef_critic: 0.0,
            angle_coef_actor: 1.0,
            her_k: 4,
            replay_capacity: 1_000_000,
            interpolator: Interpolator::Normalize,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.policy_delay == 0 {
            return bad("batch_size, replay_capacity and policy_delay must be positive");
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("target_noise", self.target_noise),
            ("target_noise_clip", self.target_noise_clip),
            ("exploration_noise", self.exploration_noise),
            ("angle_coef_critic", self.angle_coef_critic),
            ("angle_coef_actor", self.angle_coef_actor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AgentError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// A training minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `s ⊕ λ`, one row per sample.
    pub obs_pref: Array2<f64>,
    pub next_obs_pref: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub done: Vec<bool>,
    pub lambdas: Vec<PreferenceVector>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self, AgentError> {
        let b = ts.len();
        if b == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let obs_dim = ts[0].s.len();
        let width = obs_dim + PREF_DIM;
        let mut obs_pref = Array2::zeros((b, width));
        let mut next_obs_pref = Array2::zeros((b, width));
        let mut actions = Array2::zeros((b, ACTION_DIM));
        let mut rewards = Array2::zeros((b, REWARD_DIM));
        for (i, t) in ts.iter().enumerate() {
            if t.s.len() != obs_dim || t.s_next.len() != obs_dim {
                return Err(NnError::Shape("inconsistent observation sizes in batch".into()).into());
            }
            let lam = t.lambda.as_array();
            let mut row = obs_pref.row_mut(i);
            for (j, &v) in t.s.iter().enumerate() {
                row[j] = f64::from(v);
            }
            let mut next = next_obs_pref.row_mut(i);
            for (j, &v) in t.s_next.iter().enumerate() {
                next[j] = f64::from(v);
            }
            for k in 0..PREF_DIM {
                obs_pref[[i, obs_dim + k]] = lam[k];
                next_obs_pref[[i, obs_dim + k]] = lam[k];
            }
            actions[[i, 0]] = t.a[0];
            actions[[i, 1]] = t.a[1];
            for k in 0..REWARD_DIM {
                rewards[[i, k]] = t.r[k];
            }
        }
        Ok(Self {
            obs_pref,
            next_obs_pref,
            actions,
            rewards,
            done: ts.iter().map(|t| t.done).collect(),
            lambdas: ts.iter().map(|t| t.lambda).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    /// Mean scalarized Q of the first critic on the batch.
    pub q_mean: f64,
}

#[derive(Debug, Clone)]
pub struct Td3 {
    pub config: Td3Config,
    pub obs_dim: usize,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub critic_updates: u64,
}

fn q_row(q: &Array2<f64>, i: usize) -> [f64; REWARD_DIM] {
    std::array::from_fn(|k| q[[i, k]])
}

fn pref_part(q: &[f64; REWARD_DIM]) -> [f64; PREF_DIM] {
    [q[1], q[2], q[3], q[4]]
}

impl Td3 {
    pub fn actor_sizes(config: &Td3Config, obs_dim: usize) -> Vec<usize> {
        let mut s = vec![obs_dim + PREF_DIM];
        s.extend(&config.hidden);
        s.push(ACTION_DIM);
        s
    }

    pub fn critic_sizes(config: &Td3Config, obs_dim: usize) -> Vec<usize> {
        let mut s = vec![obs_dim + PREF_DIM + ACTION_DIM];
        s.extend(&config.hidden);
        s.push(REWARD_DIM);
        s
    }

    pub fn new<R: Rng + ?Sized>(config: Td3Config, obs_dim: usize, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = Mlp::new(&Self::actor_sizes(&config, obs_dim), Activation::Tanh, rng)?;
        let c1 = Mlp::new(&Self::critic_sizes(&config, obs_dim), Activation::Identity, rng)?;
        let c2 = Mlp::new(&Self::critic_sizes(&config, obs_dim), Activation::Identity, rng)?;
        let actor_cfg = AdamConfig {
            lr: config.actor_lr,
            ..AdamConfig::default()
        };
        let critic_cfg = AdamConfig {
            lr: config.critic_lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            actor_opt: Adam::new(&actor, actor_cfg),
            critic_opts: [Adam::new(&c1, critic_cfg.clone()), Adam::new(&c2, critic_cfg)],
            actor_target: actor.clone(),
            critic_targets: [c1.clone(), c2.clone()],
            actor,
            critics: [c1, c2],
            config,
            obs_dim,
            critic_updates: 0,
        })
    }

    fn policy_input(&self, obs: &[f64], lambda: &PreferenceVector) -> Result<Vec<f64>, AgentError> {
        if obs.len() != self.obs_dim {
            return Err(NnError::InputDim {
                expected: self.obs_dim,
                got: obs.len(),
            }
            .into());
        }
        let mut x = Vec::with_capacity(obs.len() + PREF_DIM);
        x.extend_from_slice(obs);
        x.extend_from_slice(&lambda.as_array());
        Ok(x)
    }

    /// Deterministic policy action.
    pub fn act(&self, obs: &[f64], lambda: &PreferenceVector) -> Result<Action, AgentError> {
        let y = self.actor.forward_one(&self.policy_input(obs, lambda)?)?;
        Ok(Action::new(y[0], y[1]))
    }

    /// Policy action plus Gaussian exploration noise, clipped to the action box.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        lambda: &PreferenceVector,
        std: f64,
        rng: &mut R,
    ) -> Result<Action, AgentError> {
        let a = self.act(obs, lambda)?;
        if std == 0.0 {
            return Ok(a);
        }
        let n0: f64 = StandardNormal.sample(rng);
        let n1: f64 = StandardNormal.sample(rng);
        Ok(Action::new(a.steer + std * n0, a.longitudinal + std * n1))
    }

    /// Both critics' Q-vectors for one state-action pair.
    pub fn q_values(&self, obs: &[f64], lambda: &PreferenceVector, action: Action) -> Result<[[f64; REWARD_DIM]; 2], AgentError> {
        let mut x = self.policy_input(obs, lambda)?;
        x.extend_from_slice(&action.to_array());
        let q1 = self.critics[0].forward_one(&x)?;
        let q2 = self.critics[1].forward_one(&x)?;
        Ok([std::array::from_fn(|k| q1[k]), std::array::from_fn(|k| q2[k])])
    }

    /// Vector TD targets with clipped target-policy smoothing and scalarized twin-min.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array2<f64>, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let c = &self.config;
        let mut next_a = self.actor_target.forward(batch.next_obs_pref.view())?;
        next_a.mapv_inplace(|a| {
            let n: f64 = StandardNormal.sample(rng);
            let noise = (c.target_noise * n).clamp(-c.target_noise_clip, c.target_noise_clip);
            (a + noise).clamp(-1.0, 1.0)
        });
        let x = concatenate![Axis(1), batch.next_obs_pref, next_a];
        let q1 = self.critic_targets[0].forward(x.view())?;
        let q2 = self.critic_targets[1].forward(x.view())?;
        let mut y = batch.rewards.clone();
        for i in 0..batch.len() {
            if batch.done[i] {
                continue;
            }
            let w = batch.lambdas[i].augmented();
            let (a, b) = (q_row(&q1, i), q_row(&q2, i));
            let sel = if scalarize_weights(&w, &a) <= scalarize_weights(&w, &b) { a } else { b };
            for k in 0..REWARD_DIM {
                y[[i, k]] += c.gamma * sel[k];
            }
        }
        Ok(y)
    }

    fn critic_input(batch: &Batch) -> Array2<f64> {
        concatenate![Axis(1), batch.obs_pref, batch.actions]
    }

    /// Loss and parameter gradients of critic `k` against fixed targets.
    pub fn critic_loss_grads(&self, k: usize, batch: &Batch, targets: &Array2<f64>) -> Result<(f64, Gradients), AgentError> {
        let x = Self::critic_input(batch);
        let cache = self.critics[k].forward_cached(x.view())?;
        let q = cache.output();
        if q.dim() != targets.dim() {
            return Err(NnError::Shape("targets do not match critic output".into()).into());
        }
        let b = batch.len() as f64;
        let diff = q - targets;
        let mut loss = diff.mapv(|d| d * d).sum() / (b * REWARD_DIM as f64);
        let mut grad = diff.mapv(|d| 2.0 * d / (b * REWARD_DIM as f64));
        let coef = self.config.angle_coef_critic;
        if coef > 0.0 {
            for i in 0..batch.len() {
                let lp = self.config.interpolator.interpolate(&batch.lambdas[i])?;
                let (v, g) = angle_loss_with_grad(&lp, &pref_part(&q_row(q, i)));
                loss += coef * v / b;
                for j in 0..PREF_DIM {
                    grad[[i, j + 1]] += coef * g[j] / b;
                }
            }
        }
        let (grads, _) = self.critics[k].backward(&cache, grad.view())?;
        Ok((loss, grads))
    }

    /// One optimizer step on both critics; returns their mean loss.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64, AgentError> {
        let targets = self.td_targets(batch, rng)?;
        let mut total = 0.0;
        for k in 0..2 {
            let (loss, grads) = self.critic_loss_grads(k, batch, &targets)?;
            self.critic_opts[k].update(&mut self.critics[k], &grads);
            total += loss;
        }
        self.critic_updates += 1;
        Ok(total / 2.0)
    }

    /// Actor loss `−mean λ̃·Q1 + c·mean angle(λ_p, Q1_pref)` and its actor gradients.
    pub fn actor_loss_grads(&self, batch: &Batch) -> Result<(f64, Gradients), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let actor_cache = self.actor.forward_cached(batch.obs_pref.view())?;
        let x = concatenate![Axis(1), batch.obs_pref, *actor_cache.output()];
        let critic_cache = self.critics[0].forward_cached(x.view())?;
        let q = critic_cache.output();
        let b = batch.len() as f64;
        let coef = self.config.angle_coef_actor;
        let mut loss = 0.0;
        let mut grad_q = Array2::zeros(q.dim());
        for i in 0..batch.len() {
            let w = batch.lambdas[i].augmented();
            let qi = q_row(q, i);
            loss -= scalarize_weights(&w, &qi) / b;
            for k in 0..REWARD_DIM {
                grad_q[[i, k]] = -w[k] / b;
            }
            if coef > 0.0 {
                let lp = self.config.interpolator.interpolate(&batch.lambdas[i])?;
                let (v, g) = angle_loss_with_grad(&lp, &pref_part(&qi));
                loss += coef * v / b;
                for j in 0..PREF_DIM {
                    grad_q[[i, j + 1]] += coef * g[j] / b;
                }
            }
        }
        let (_, grad_x) = self.critics[0].backward(&critic_cache, grad_q.view())?;
        let width = grad_x.ncols();
        let grad_a = grad_x.slice(s![.., width - ACTION_DIM..]).to_owned();
        let (grads, _) = self.actor.backward(&actor_cache, grad_a.view())?;
        Ok((loss, grads))
    }

    /// Actor step followed by soft updates of all target networks.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64, AgentError> {
        let (loss, grads) = self.actor_loss_grads(batch)?;
        self.actor_opt.update(&mut self.actor, &grads);
        let tau = self.config.tau;
        soft_update(&mut self.actor_target, &self.actor, tau);
        for k in 0..2 {
            soft_update(&mut self.critic_targets[k], &self.critics[k], tau);
        }
        Ok(loss)
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Batch, AgentError> {
        let idx = buffer.sample_indices(rng, self.config.batch_size);
        let ts: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        Batch::from_transitions(&ts)
    }

    /// One critic update and, every `policy_delay` critic updates, an actor update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats, AgentError> {
        let batch = self.sample_batch(buffer, rng)?;
        let critic_loss = self.critic_update(&batch, rng)?;
        let actor_loss = if self.critic_updates % self.config.policy_delay == 0 {
            Some(self.actor_update(&batch)?)
        } else {
            None
        };
        let x = Self::critic_input(&batch);
        let q = self.critics[0].forward(x.view())?;
        let q_mean = (0..batch.len())
            .map(|i| scalarize_weights(&batch.lambdas[i].augmented(), &q_row(&q, i)))
            .sum::<f64>()
            / batch.len() as f64;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            q_mean,
        })
    }

    fn meta(&self, kind: &str) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "kind": kind,
            "obs_dim": self.obs_dim,
            "agent": self.config,
            "actor_sizes": self.actor.sizes(),
            "critic_sizes": self.critics[0].sizes(),
        })
    }

    /// Actor and critics only, enough for evaluation.
    pub fn policy_container(&self) -> Container {
        let mut c = Container::new(self.meta("policy"));
        c.push_f64("actor", self.actor.flatten());
        c.push_f64("critic0", self.critics[0].flatten());
        c.push_f64("critic1", self.critics[1].flatten());
        c
    }

    /// Appends targets and optimizer state to a policy container.
    pub fn write_training_state(&self, c: &mut Container) {
        c.push_f64("actor_target", self.actor_target.flatten());
        c.push_f64("critic_target0", self.critic_targets[0].flatten());
        c.push_f64("critic_target1", self.critic_targets[1].flatten());
        let opts = [&self.actor_opt, &self.critic_opts[0], &self.critic_opts[1]];
        for (name, opt) in ["actor_opt", "critic_opt0", "critic_opt1"].into_iter().zip(opts) {
            let (m, v) = opt.flatten_moments();
            c.push_f64(format!("{name}.m"), m);
            c.push_f64(format!("{name}.v"), v);
        }
        c.push(
            "counters",
            crate::store::ArrayData::U64(vec![
                self.critic_updates,
                self.actor_opt.step,
                self.critic_opts[0].step,
                self.critic_opts[1].step,
            ]),
        );
    }

    /// Rebuilds an agent from a policy container; training state is restored when present.
    pub fn from_container(c: &mut Container) -> Result<Self, AgentError> {
        let meta = c.meta.clone();
        let config: Td3Config = serde_json::from_value(meta["agent"].clone())
            .map_err(|e| AgentError::Incompatible(format!("agent config: {e}")))?;
        let obs_dim = meta["obs_dim"]
            .as_u64()
            .ok_or_else(|| AgentError::Incompatible("missing obs_dim".into()))? as usize;
        let mut agent = Self::zeroed(config, obs_dim)?;
        for (key, sizes) in [
            ("actor_sizes", agent.actor.sizes()),
            ("critic_sizes", agent.critics[0].sizes()),
        ] {
            let stored: Vec<usize> = serde_json::from_value(meta[key].clone())
                .map_err(|e| AgentError::Incompatible(format!("{key}: {e}")))?;
            if stored != sizes {
                return Err(AgentError::Incompatible(format!("{key} {stored:?} != {sizes:?}")));
            }
        }
        agent.actor.load_flat(&c.take_f64("actor")?)?;
        agent.critics[0].load_flat(&c.take_f64("critic0")?)?;
        agent.critics[1].load_flat(&c.take_f64("critic1")?)?;
        if c.has("actor_target") {
            agent.actor_target.load_flat(&c.take_f64("actor_target")?)?;
            agent.critic_targets[0].load_flat(&c.take_f64("critic_target0")?)?;
            agent.critic_targets[1].load_flat(&c.take_f64("critic_target1")?)?;
            let counters = c.take_u64("counters")?;
            if counters.len() != 4 {
                return Err(AgentError::Incompatible("counters".into()));
            }
            agent.critic_updates = counters[0];
            let nets = [agent.actor.clone(), agent.critics[0].clone(), agent.critics[1].clone()];
            let [c0, c1] = &mut agent.critic_opts;
            let opts = [&mut agent.actor_opt, c0, c1];
            for (((name, opt), net), step) in ["actor_opt", "critic_opt0", "critic_opt1"]
                .into_iter()
                .zip(opts)
                .zip(&nets)
                .zip(&counters[1..])
            {
                let m = c.take_f64(&format!("{name}.m"))?;
                let v = c.take_f64(&format!("{name}.v"))?;
                opt.load_moments(net, &m, &v, *step)?;
            }
        } else {
            agent.actor_target = agent.actor.clone();
            agent.critic_targets = agent.critics.clone();
        }
        Ok(agent)
    }

    fn zeroed(config: Td3Config, obs_dim: usize) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = Mlp::zeros(&Self::actor_sizes(&config, obs_dim), Activation::Tanh)?;
        let critic = Mlp::zeros(&Self::critic_sizes(&config, obs_dim), Activation::Identity)?;
        let a_cfg = AdamConfig {
            lr: config.actor_lr,
            ..AdamConfig::default()
        };
        let c_cfg = AdamConfig {
            lr: config.critic_lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            actor_opt: Adam::new(&actor, a_cfg),
            critic_opts: [Adam::new(&critic, c_cfg.clone()), Adam::new(&critic, c_cfg)],
            actor_target: actor.clone(),
            critic_targets: [critic.clone(), critic.clone()],
            actor,
            critics: [critic.clone(), critic],
            config,
            obs_dim,
            critic_updates: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::replay::share;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> Td3Config {
        Td3Config {
            hidden: vec![6, 5],
            batch_size: 8,
            ..Td3Config::default()
        }
    }

    fn random_transitions(rng: &mut ChaCha8Rng, n: usize, obs_dim: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s2: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                Transition {
                    s: share(&s),
                    a: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    r: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                    s_next: share(&s2),
                    done: i % 3 == 0,
                    lambda: PreferenceVector::sample(rng),
                }
            })
            .collect()
    }

    fn batch_of(ts: &[Transition]) -> Batch {
        let refs: Vec<&Transition> = ts.iter().collect();
        Batch::from_transitions(&refs).unwrap()
    }

    #[test]
    fn full_size_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Td3::new(Td3Config::default(), 154, &mut rng).unwrap();
        assert_eq!(agent.actor.sizes(), vec![158, 250, 125, 2]);
        assert_eq!(agent.critics[0].sizes(), vec![160, 250, 125, 5]);
    }

    #[test]
    fn actions_are_clipped_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = Td3::new(tiny_config(), 7, &mut rng).unwrap();
        let obs = [0.3; 7];
        let lam = PreferenceVector::uniform();
        assert_eq!(agent.act(&obs, &lam).unwrap(), agent.select_action(&obs, &lam, 0.0, &mut rng).unwrap());
        for _ in 0..200 {
            let a = agent.select_action(&obs, &lam, 5.0, &mut rng).unwrap();
            assert!(a.steer.abs() <= 1.0 && a.longitudinal.abs() <= 1.0);
        }
        assert!(agent.act(&[0.0; 3], &lam).is_err());
    }

    #[test]
    fn terminal_and_zero_gamma_targets_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = Td3::new(tiny_config(), 7, &mut rng).unwrap();
        let mut ts = random_transitions(&mut rng, 6, 7);
        for t in &mut ts {
            t.done = true;
        }
        let b = batch_of(&ts);
        assert_eq!(agent.td_targets(&b, &mut rng).unwrap(), b.rewards);
        for t in &mut ts {
            t.done = false;
        }
        agent.config.gamma = 0.0;
        let b = batch_of(&ts);
        assert_eq!(agent.td_targets(&b, &mut rng).unwrap(), b.rewards);
    }

    #[test]
    fn twin_min_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Td3::new(tiny_config(), 7, &mut rng).unwrap();
        let mut ts = random_transitions(&mut rng, 16, 7);
        for t in &mut ts {
            t.done = false;
            t.r = [0.0; 5];
        }
        let b = batch_of(&ts);
        agent.config.gamma = 1.0;
        agent.config.target_noise = 0.0;
        // Identical twins give the same target whichever one is picked.
        agent.critic_targets[1] = agent.critic_targets[0].clone();
        let y = agent.td_targets(&b, &mut rng).unwrap();
        let next_a = agent.actor_target.forward(b.next_obs_pref.view()).unwrap();
        let x = concatenate![Axis(1), b.next_obs_pref, next_a];
        let q = agent.critic_targets[0].forward(x.view()).unwrap();
        assert_eq!(y, q);
        // Distinct twins: scalarized target never exceeds either critic.
        let fresh = Mlp::new(&Td3::critic_sizes(&agent.config, 7), Activation::Identity, &mut rng).unwrap();
        agent.critic_targets[1] = fresh;
        let y = agent.td_targets(&b, &mut rng).unwrap();
        let q1 = agent.critic_targets[0].forward(x.view()).unwrap();
        let q2 = agent.critic_targets[1].forward(x.view()).unwrap();
        for i in 0..b.len() {
            let w = b.lambdas[i].augmented();
            let sy = scalarize_weights(&w, &q_row(&y, i));
            assert!(sy <= scalarize_weights(&w, &q_row(&q1, i)) + 1e-12);
            assert!(sy <= scalarize_weights(&w, &q_row(&q2, i)) + 1e-12);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1e-6f64.max(a.abs()).max(b.abs())
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..5 {
            let mut agent = Td3::new(tiny_config(), 5, &mut rng).unwrap();
            // Output layers at ±3e-3 make gradients tiny; widen them for a sharper check.
            for net in [&mut agent.actor, &mut agent.critics[0]] {
                for v in net.layers.last_mut().unwrap().w.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            agent.config.angle_coef_actor = if trial % 2 == 0 { 1.0 } else { 0.0 };
            let b = batch_of(&random_transitions(&mut rng, 6, 5));
            let (_, grads) = agent.actor_loss_grads(&b).unwrap();
            let base = agent.actor.flatten();
            let h = 1e-5;
            for (i, g) in grads.flatten().into_iter().enumerate() {
                let mut p = base.clone();
                p[i] += h;
                agent.actor.load_flat(&p).unwrap();
                let up = agent.actor_loss_grads(&b).unwrap().0;
                p[i] -= 2.0 * h;
                agent.actor.load_flat(&p).unwrap();
                let down = agent.actor_loss_grads(&b).unwrap().0;
                agent.actor.load_flat(&base).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!(rel_err(g, fd) < 1e-4 || (g - fd).abs() < 1e-9, "param {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = Td3::new(Td3Config { angle_coef_critic: 0.5, ..tiny_config() }, 5, &mut rng).unwrap();
        let b = batch_of(&random_transitions(&mut rng, 6, 5));
        let y = agent.td_targets(&b, &mut rng).unwrap();
        let (_, grads) = agent.critic_loss_grads(0, &b, &y).unwrap();
        let base = agent.critics[0].flatten();
        let h = 1e-5;
        for (i, g) in grads.flatten().into_iter().enumerate() {
            let mut p = base.clone();
            p[i] += h;
            agent.critics[0].load_flat(&p).unwrap();
            let up = agent.critic_loss_grads(0, &b, &y).unwrap().0;
            p[i] -= 2.0 * h;
            agent.critics[0].load_flat(&p).unwrap();
            let down = agent.critic_loss_grads(0, &b, &y).unwrap().0;
            agent.critics[0].load_flat(&base).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(g, fd) < 1e-4 || (g - fd).abs() < 1e-9, "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn zero_angle_coefficient_is_plain_scalarized_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agent = Td3::new(tiny_config(), 5, &mut rng).unwrap();
        agent.config.angle_coef_actor = 0.0;
        let b = batch_of(&random_transitions(&mut rng, 6, 5));
        let (loss, _) = agent.actor_loss_grads(&b).unwrap();
        let mut expected = 0.0;
        for i in 0..b.len() {
            let obs: Vec<f64> = b.obs_pref.row(i).iter().take(5).copied().collect();
            let a = agent.act(&obs, &b.lambdas[i]).unwrap();
            let q = agent.q_values(&obs, &b.lambdas[i], a).unwrap()[0];
            expected -= scalarize_weights(&b.lambdas[i].augmented(), &q);
        }
        assert_abs_diff_eq!(loss, expected / b.len() as f64, epsilon = 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = Td3::new(tiny_config(), 5, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(100);
        buf.extend(random_transitions(&mut rng, 40, 5));
        for _ in 0..5 {
            agent.train_step(&buf, &mut rng).unwrap();
        }
        let mut c = agent.policy_container();
        agent.write_training_state(&mut c);
        let restored = Td3::from_container(&mut c.clone()).unwrap();
        assert_eq!(restored.actor, agent.actor);
        assert_eq!(restored.critic_targets, agent.critic_targets);
        assert_eq!(restored.critic_opts[1], agent.critic_opts[1]);
        assert_eq!(restored.critic_updates, 5);

        let mut wrong = c.clone();
        wrong.meta["actor_sizes"] = serde_json::json!([10, 6, 5, 2]);
        assert!(matches!(Td3::from_container(&mut wrong), Err(AgentError::Incompatible(_))));
        let mut short = agent.policy_container();
        short.take_f64("actor").unwrap();
        short.push_f64("actor", vec![0.0; 3]);
        assert!(matches!(Td3::from_container(&mut short), Err(AgentError::Nn(NnError::Shape(_)))));
    }

    #[test]
    fn updates_keep_parameters_finite_and_delay_actor() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut agent = Td3::new(tiny_config(), 5, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(100);
        buf.extend(random_transitions(&mut rng, 50, 5));
        let mut actor_steps = 0;
        for _ in 0..20 {
            let s = agent.train_step(&buf, &mut rng).unwrap();
            assert!(s.critic_loss.is_finite() && s.q_mean.is_finite());
            actor_steps += s.actor_loss.is_some() as usize;
        }
        assert_eq!(actor_steps, 10);
        assert!(agent.actor.is_finite() && agent.critics.iter().all(Mlp::is_finite));
        assert!(matches!(agent.train_step(&ReplayBuffer::new(3), &mut rng), Err(AgentError::EmptyBatch)));
    }
}
