//! Twin delayed deep deterministic policy gradients with a uniform replay
//! buffer.
//!
//! Noise scales in [`Td3Config`] are fractions of the action bound, so the
//! same configuration works for any `a_max`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, OptimState, OutputActivation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    /// Target policy smoothing std, in units of the action bound.
    pub target_noise: f64,
    /// Target smoothing clip, in units of the action bound.
    pub target_noise_clip: f64,
    pub batch_size: usize,
    /// Exploration std, in units of the action bound.
    pub exploration_std: f64,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Environment steps with uniformly random actions before the policy acts.
    pub warmup_steps: u64,
    /// Gradient updates start once the buffer holds this many transitions.
    pub learning_starts: usize,
    /// Critic updates before the actor and targets start moving.
    pub critic_burn_in: u64,
    pub hidden: Vec<usize>,
    /// Half-width of the uniform initialisation of the actor's last layer.
    pub actor_final_init: f64,
    /// Weight of the penalty `mean((u / a_max)^2)` added to the actor loss.
    pub action_l2: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.1,
            target_noise_clip: 0.25,
            batch_size: 128,
            exploration_std: 0.1,
            buffer_capacity: 100_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            warmup_steps: 500,
            learning_starts: 128,
            critic_burn_in: 0,
            hidden: vec![64, 64],
            actor_final_init: 1e-3,
            action_l2: 0.0,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent.{m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1");
        }
        if !(self.target_noise >= 0.0 && self.target_noise_clip >= 0.0 && self.exploration_std >= 0.0) {
            return bad("noise scales must be >= 0");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if !(self.actor_final_init >= 0.0) {
            return bad("actor_final_init must be >= 0");
        }
        if !(self.action_l2 >= 0.0) {
            return bad("action_l2 must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    /// The policy's own action, before any controller is added.
    pub u: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    /// True only for genuine terminal states; time-limit truncation keeps
    /// bootstrapping.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

/// Column-stacked sample of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub s: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub s2: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let mut b = Batch { n: ts.len(), s: vec![], u: vec![], r: vec![], s2: vec![], done: vec![] };
        for t in ts {
            b.s.extend_from_slice(&t.s);
            b.u.extend_from_slice(&t.u);
            b.r.push(t.r);
            b.s2.extend_from_slice(&t.s2);
            b.done.push(t.done);
        }
        b
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, data: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Slot the next store goes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    pub fn store(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.data.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.data.len())).collect()
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(n, rng);
        let ts: Vec<&Transition> = idx.iter().map(|&i| &self.data[i]).collect();
        Batch::from_transitions(&ts)
    }
}

/// Anything that can report `dQ/du` for a batch of state-action pairs.
pub trait ActionValue {
    fn action_gradient(&self, s: &[f64], u: &[f64], n: usize) -> Result<Vec<f64>>;
}

/// A critic network that sees actions divided by the action bound, so that
/// its action inputs are of order one.
#[derive(Debug, Clone, Copy)]
pub struct ScaledCritic<'a> {
    pub net: &'a Mlp,
    pub a_max: f64,
}

impl ScaledCritic<'_> {
    fn inputs(&self, s: &[f64], u: &[f64], n: usize) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().map(|v| v / self.a_max).collect();
        concat_rows(s, &scaled, n)
    }

    pub fn value(&self, s: &[f64], u: &[f64], n: usize) -> Result<Vec<f64>> {
        self.net.predict(&self.inputs(s, u, n), n)
    }
}

impl ActionValue for ScaledCritic<'_> {
    fn action_gradient(&self, s: &[f64], u: &[f64], n: usize) -> Result<Vec<f64>> {
        let x = self.inputs(s, u, n);
        let (_, cache) = self.net.forward_batch(&x, n)?;
        let gx = self.net.backward_input(&cache, &vec![1.0; n])?;
        let d_in = self.net.input_dim();
        let du = u.len() / n;
        Ok(gx.chunks_exact(d_in).flat_map(|row| row[d_in - du..].iter().map(|g| g / self.a_max)).collect())
    }
}

/// Rows `[s | u]` for a critic.
fn concat_rows(s: &[f64], u: &[f64], n: usize) -> Vec<f64> {
    let (ds, du) = (s.len() / n.max(1), u.len() / n.max(1));
    let mut out = Vec::with_capacity(n * (ds + du));
    for i in 0..n {
        out.extend_from_slice(&s[i * ds..(i + 1) * ds]);
        out.extend_from_slice(&u[i * du..(i + 1) * du]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// `pi(s)`.
    Deterministic,
    /// `clip(pi(s) + N(0, exploration_std^2))`.
    Explore,
    /// Uniform in the action box.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub a_max: f64,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub actor_opt: OptimState,
    pub critic1_opt: OptimState,
    pub critic2_opt: OptimState,
    /// Critic updates performed so far.
    pub updates: u64,
}

impl Td3Agent {
    pub fn new(config: Td3Config, obs_dim: usize, act_dim: usize, a_max: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if !(a_max > 0.0) {
            return Err(Error::Config("a_max must be > 0".into()));
        }
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, OutputActivation::Tanh { scale: a_max }, config.actor_final_init, rng)?;
        let final_critic = 1.0 / (*critic_sizes.iter().rev().nth(1).unwrap() as f64).sqrt();
        let critic1 = Mlp::new(&critic_sizes, OutputActivation::Linear, final_critic, rng)?;
        let critic2 = Mlp::new(&critic_sizes, OutputActivation::Linear, final_critic, rng)?;
        Ok(Self {
            actor_opt: OptimState::new(actor.n_params(), config.actor_lr),
            critic1_opt: OptimState::new(critic1.n_params(), config.critic_lr),
            critic2_opt: OptimState::new(critic2.n_params(), config.critic_lr),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            obs_dim,
            act_dim,
            a_max,
            updates: 0,
        })
    }

    pub fn scaled<'a>(&self, net: &'a Mlp) -> ScaledCritic<'a> {
        ScaledCritic { net, a_max: self.a_max }
    }

    pub fn select_action(&self, s: &[f64], mode: ActionMode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if s.len() != self.obs_dim {
            return Err(Error::Dimension { expected: self.obs_dim, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        let a_max = self.a_max;
        match mode {
            ActionMode::Random => Ok((0..self.act_dim).map(|_| rng.random_range(-a_max..=a_max)).collect()),
            ActionMode::Deterministic => self.actor.predict(s, 1),
            ActionMode::Explore => {
                let mut a = self.actor.predict(s, 1)?;
                let std = self.config.exploration_std * a_max;
                if std > 0.0 {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    for v in a.iter_mut() {
                        *v = (*v + dist.sample(rng)).clamp(-a_max, a_max);
                    }
                }
                Ok(a)
            }
        }
    }

    /// Clipped double-Q targets with target policy smoothing.
    pub fn compute_target(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let n = batch.n;
        let a_max = self.a_max;
        let mut a2 = self.actor_target.predict(&batch.s2, n)?;
        let std = self.config.target_noise * a_max;
        let clip = self.config.target_noise_clip * a_max;
        if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in a2.iter_mut() {
                *v = (*v + dist.sample(rng).clamp(-clip, clip)).clamp(-a_max, a_max);
            }
        }
        let q1 = self.scaled(&self.critic1_target).value(&batch.s2, &a2, n)?;
        let q2 = self.scaled(&self.critic2_target).value(&batch.s2, &a2, n)?;
        Ok((0..n)
            .map(|i| {
                let boot = if batch.done[i] { 0.0 } else { self.config.gamma * q1[i].min(q2[i]) };
                batch.r[i] + boot
            })
            .collect())
    }

    /// One Adam step on each critic towards fixed targets `y`.
    pub fn update_critics(&mut self, batch: &Batch, y: &[f64]) -> Result<[f64; 2]> {
        let n = batch.n;
        let x = self.scaled(&self.critic1).inputs(&batch.s, &batch.u, n);
        let mut losses = [0.0; 2];
        for (k, (critic, opt)) in
            [(&mut self.critic1, &mut self.critic1_opt), (&mut self.critic2, &mut self.critic2_opt)].into_iter().enumerate()
        {
            let (q, cache) = critic.forward_batch(&x, n)?;
            let loss = q.iter().zip(y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("critic {} loss", k + 1)));
            }
            let grad_q: Vec<f64> = q.iter().zip(y).map(|(q, y)| 2.0 * (q - y) / n as f64).collect();
            let (grads, _) = critic.backward(&cache, &grad_q)?;
            critic.adam_step(&grads, opt)?;
            losses[k] = loss;
        }
        self.updates += 1;
        Ok(losses)
    }

    /// One Adam step on the actor ascending `critic(s, pi(s))` minus the
    /// action penalty.
    pub fn update_actor_with<C: ActionValue + ?Sized>(&mut self, states: &[f64], n: usize, critic: &C) -> Result<()> {
        let (a, cache) = self.actor.forward_batch(states, n)?;
        let dq = critic.action_gradient(states, &a, n)?;
        let l2 = 2.0 * self.config.action_l2 / (self.a_max * self.a_max);
        let grad_a: Vec<f64> = dq.iter().zip(&a).map(|(g, a)| (l2 * a - g) / n as f64).collect();
        let (grads, _) = self.actor.backward(&cache, &grad_a)?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("actor gradient".into()));
        }
        self.actor.adam_step(&grads, &mut self.actor_opt)
    }

    pub fn polyak_update(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.actor_target.polyak_from(&self.actor, tau)?;
        self.critic1_target.polyak_from(&self.critic1, tau)?;
        self.critic2_target.polyak_from(&self.critic2, tau)
    }

    /// Actor step against the first critic, then all target networks.
    pub fn update_actor_and_targets(&mut self, batch: &Batch) -> Result<f64> {
        let critic = self.critic1.clone();
        self.update_actor_with(&batch.s, batch.n, &ScaledCritic { net: &critic, a_max: self.a_max })?;
        let a = self.actor.predict(&batch.s, batch.n)?;
        let q = self.scaled(&self.critic1).value(&batch.s, &a, batch.n)?;
        self.polyak_update()?;
        Ok(-q.iter().sum::<f64>() / batch.n as f64)
    }

    /// Full TD3 update from one sampled batch: critics every call, actor
    /// and targets every `policy_delay` critic updates.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let batch = buffer.sample(self.config.batch_size, rng);
        let y = self.compute_target(&batch, rng)?;
        let critic_loss = self.update_critics(&batch, &y)?;
        let actor_loss = if self.updates % self.config.policy_delay != 0 {
            None
        } else if self.updates > self.config.critic_burn_in {
            Some(self.update_actor_and_targets(&batch)?)
        } else {
            // Targets keep trailing the critics while the actor waits.
            self.polyak_update()?;
            None
        };
        Ok(UpdateStats { critic_loss, actor_loss })
    }

    pub fn networks(&self) -> [&Mlp; 6] {
        [&self.actor, &self.critic1, &self.critic2, &self.actor_target, &self.critic1_target, &self.critic2_target]
    }

    fn networks_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.actor,
            &mut self.critic1,
            &mut self.critic2,
            &mut self.actor_target,
            &mut self.critic1_target,
            &mut self.critic2_target,
        ]
    }

    /// Writes all six networks and the update counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "td3 {} {} {:?} {}", self.obs_dim, self.act_dim, self.a_max, self.updates)?;
        for net in self.networks() {
            net.write_to(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Only the actor of a checkpoint, for evaluation.
    pub fn load_actor(path: &Path) -> Result<Mlp> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        if !header.starts_with("td3 ") {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        Mlp::read_from(&mut r)
    }

    /// Replaces the networks and counter with a checkpoint's. Optimiser
    /// state starts fresh.
    pub fn load_networks(&mut self, path: &Path) -> Result<()> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse = |i: usize| -> Result<&str> {
            fields.get(i).copied().ok_or_else(|| Error::Checkpoint("truncated agent header".into()))
        };
        if parse(0)? != "td3" {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Checkpoint("bad agent header".into()));
        let (obs_dim, act_dim) = (num(parse(1)?)?, num(parse(2)?)?);
        if obs_dim != self.obs_dim {
            return Err(Error::Dimension { expected: self.obs_dim, got: obs_dim });
        }
        if act_dim != self.act_dim {
            return Err(Error::Dimension { expected: self.act_dim, got: act_dim });
        }
        let updates = parse(4)?.parse::<u64>().map_err(|_| Error::Checkpoint("bad agent header".into()))?;
        let mut loaded = Vec::with_capacity(6);
        for _ in 0..6 {
            loaded.push(Mlp::read_from(&mut r)?);
        }
        for (dst, src) in self.networks_mut().into_iter().zip(loaded) {
            if dst.sizes() != src.sizes() {
                return Err(Error::Checkpoint(format!(
                    "network shape {:?} does not match {:?}",
                    src.sizes(),
                    dst.sizes()
                )));
            }
            *dst = src;
        }
        self.updates = updates;
        Ok(())
    }
}
