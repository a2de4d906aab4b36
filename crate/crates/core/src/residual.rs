//! Residual training loop: the learned policy's action is added to the
//! hand controller's and the sum is executed, while the replay buffer only
//! ever sees the learned part.

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{PController, PControllerParams};
use crate::env::{obs_index, Action, Env, EnvConfig, Observation, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::physics::PhysicsParams;
use crate::seeding::{derive_seed, stream};
use crate::td3::{ActionMode, ReplayBuffer, Td3Agent, Td3Config, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Residual,
    PureRl,
    HandOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Residual => "residual",
            Mode::PureRl => "pure_rl",
            Mode::HandOnly => "hand_only",
        }
    }

    pub fn uses_agent(self) -> bool {
        self != Mode::HandOnly
    }

    pub fn uses_controller(self) -> bool {
        self != Mode::PureRl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Environment steps per training run.
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Stream one record per environment step (large files).
    pub log_steps: bool,
    /// Positions in the observation are divided by this before reaching
    /// the networks (m).
    pub obs_length_scale: f64,
    /// Same for the contact force entry (N).
    pub obs_force_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 30_000,
            eval_interval: 1000,
            eval_episodes: 20,
            log_steps: false,
            obs_length_scale: 0.05,
            obs_force_scale: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("train.eval_interval and train.eval_episodes must be >= 1".into()));
        }
        if !(self.obs_length_scale > 0.0 && self.obs_force_scale > 0.0) {
            return Err(Error::Config("train observation scales must be > 0".into()));
        }
        Ok(())
    }

    /// Network input for an observation.
    pub fn scale(&self, obs: &Observation) -> Vec<f64> {
        obs.0
            .iter()
            .enumerate()
            .map(|(i, &v)| match i {
                obs_index::FORCE_Z => v / self.obs_force_scale,
                obs_index::LEFT_TILT | obs_index::RIGHT_TILT => v,
                _ => v / self.obs_length_scale,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub mode: Mode,
    pub seed: u64,
    pub physics: PhysicsParams,
    pub env: EnvConfig,
    pub controller: PControllerParams,
    pub agent: Td3Config,
    pub train: TrainConfig,
    /// Agent checkpoint to start from instead of a fresh initialisation.
    pub init_checkpoint: Option<PathBuf>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.env.validate(&self.physics)?;
        self.controller.validate()?;
        self.agent.validate()?;
        self.train.validate()?;
        if self.mode == Mode::HandOnly && self.init_checkpoint.is_some() {
            return Err(Error::Config("hand_only runs take no agent checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Global step at the end of the episode.
    pub step: u64,
    pub length: u64,
    pub ret: f64,
    pub success: bool,
    pub toppled: bool,
    pub left_tilt: f64,
    pub right_tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    pub reward: f64,
    pub executed: [f64; ACT_DIM],
    pub residual: [f64; ACT_DIM],
}

/// One line of a run's record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step(StepRecord),
    Episode(EpisodeRecord),
    Eval(EvalRecord),
    Abort { step: u64, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub aborted: Option<String>,
}

impl TrainLog {
    /// First evaluation step at which the success rate reached `threshold`
    /// and stayed there for `sustain` consecutive evaluations.
    pub fn steps_to_solve(&self, threshold: f64, sustain: usize) -> Option<u64> {
        let sustain = sustain.max(1);
        self.evals
            .windows(sustain)
            .find(|w| w.iter().all(|e| e.success_rate >= threshold))
            .map(|w| w[0].step)
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }
}

/// Executed action `clip(u_rl + u_h, a_max)`.
pub fn compose(u_rl: Action, u_h: Action, a_max: f64) -> Action {
    Action::new(u_rl.0[0] + u_h.0[0], u_rl.0[1] + u_h.0[1]).clip(a_max)
}

/// What acts in the environment during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    HandOnly,
    Residual(&'a Mlp),
    PureRl(&'a Mlp),
}

impl Policy<'_> {
    fn actor(&self) -> Option<&Mlp> {
        match self {
            Policy::HandOnly => None,
            Policy::Residual(a) | Policy::PureRl(a) => Some(a),
        }
    }

    fn mode(&self) -> Mode {
        match self {
            Policy::HandOnly => Mode::HandOnly,
            Policy::Residual(_) => Mode::Residual,
            Policy::PureRl(_) => Mode::PureRl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Seed of the `k`-th evaluation episode of a run.
pub fn eval_episode_seed(run_seed: u64, k: usize) -> u64 {
    derive_seed(run_seed, &[stream::EVAL_EPISODE, k as u64])
}

/// Seed of the `k`-th training episode of a run.
pub fn train_episode_seed(run_seed: u64, k: u64) -> u64 {
    derive_seed(run_seed, &[stream::TRAIN_EPISODE, k])
}

fn policy_action(
    policy: &Policy,
    controller: &mut PController,
    obs: &Observation,
    train: &TrainConfig,
    a_max: f64,
) -> Result<(Action, Action)> {
    let u = match policy.actor() {
        Some(actor) => {
            let out = actor.predict(&train.scale(obs), 1)?;
            Action::new(out[0], out[1])
        }
        None => Action::ZERO,
    };
    let u_h = if policy.mode().uses_controller() { controller.act(obs) } else { Action::ZERO };
    Ok((u, compose(u, u_h, a_max)))
}

/// Deterministic rollouts over `n_episodes` episodes with seeds derived from
/// `seed_base`.
pub fn evaluate(
    policy: Policy,
    physics: &PhysicsParams,
    env_config: &EnvConfig,
    controller: &PControllerParams,
    train: &TrainConfig,
    n_episodes: usize,
    seed_base: u64,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut env = Env::new(physics.clone(), env_config.clone())?;
    let mut ctrl = PController::new(controller.clone(), env_config.a_max)?;
    let (mut successes, mut total) = (0usize, 0.0);
    for k in 0..n_episodes {
        let mut obs = env.reset(eval_episode_seed(seed_base, k))?;
        ctrl.reset();
        loop {
            let (_, exec) = policy_action(&policy, &mut ctrl, &obs, train, env_config.a_max)?;
            let res = env.step(exec)?;
            total += res.reward;
            obs = res.observation;
            if res.done {
                successes += res.success as usize;
                break;
            }
        }
    }
    Ok(EvalResult { success_rate: successes as f64 / n_episodes as f64, mean_return: total / n_episodes as f64 })
}

/// Result of a training run: its log and the final agent (if any).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub agent: Option<Td3Agent>,
    /// Replay contents at the end of the run (empty for hand-only runs).
    pub buffer: ReplayBuffer,
}

fn emit<W: Write + ?Sized>(sink: &mut Option<&mut W>, record: &Record) -> Result<()> {
    if let Some(w) = sink.as_deref_mut() {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Builds the agent for a spec, loading its checkpoint if one is named.
pub fn build_agent(spec: &RunSpec) -> Result<Option<Td3Agent>> {
    if !spec.mode.uses_agent() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream::INIT]));
    let mut agent = Td3Agent::new(spec.agent.clone(), OBS_DIM, ACT_DIM, spec.env.a_max, &mut rng)?;
    if let Some(path) = &spec.init_checkpoint {
        agent.load_networks(path)?;
    }
    Ok(Some(agent))
}

/// Trains one run, streaming records to `sink` as they happen. A non-finite
/// reward or action ends the run early with an abort record rather than an
/// error.
pub fn train<W: Write + ?Sized>(spec: &RunSpec, mut sink: Option<&mut W>) -> Result<TrainOutcome> {
    spec.validate()?;
    let a_max = spec.env.a_max;
    let tc = &spec.train;
    let mut agent = build_agent(spec)?;
    let mut buffer = ReplayBuffer::new(spec.agent.buffer_capacity);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream::EXPLORATION]));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream::REPLAY]));
    let mut env = Env::new(spec.physics.clone(), spec.env.clone())?;
    let mut ctrl = PController::new(spec.controller.clone(), a_max)?;
    let mut log = TrainLog::default();

    let run_eval = |agent: &Option<Td3Agent>, step: u64| -> Result<EvalRecord> {
        let policy = match (spec.mode, agent) {
            (Mode::Residual, Some(a)) => Policy::Residual(&a.actor),
            (Mode::PureRl, Some(a)) => Policy::PureRl(&a.actor),
            _ => Policy::HandOnly,
        };
        let r = evaluate(policy, &spec.physics, &spec.env, &spec.controller, tc, tc.eval_episodes, spec.seed)?;
        Ok(EvalRecord { step, success_rate: r.success_rate, mean_return: r.mean_return })
    };

    let first = run_eval(&agent, 0)?;
    emit(&mut sink, &Record::Eval(first))?;
    log.evals.push(first);

    let mut step = 0u64;
    let mut episode = 0u64;
    'run: while step < tc.total_steps {
        let mut obs = env.reset(train_episode_seed(spec.seed, episode))?;
        ctrl.reset();
        let (mut ret, mut length) = (0.0, 0u64);
        loop {
            let s = tc.scale(&obs);
            let u = match &agent {
                Some(a) => {
                    let mode = if step < spec.agent.warmup_steps { ActionMode::Random } else { ActionMode::Explore };
                    let v = a.select_action(&s, mode, &mut explore_rng)?;
                    Action::new(v[0], v[1])
                }
                None => Action::ZERO,
            };
            let u_h = if spec.mode.uses_controller() { ctrl.act(&obs) } else { Action::ZERO };
            let exec = compose(u, u_h, a_max);
            if !exec.is_finite() {
                let reason = format!("non-finite action at step {step}: {:?}", exec.0);
                emit(&mut sink, &Record::Abort { step, reason: reason.clone() })?;
                log.aborted = Some(reason);
                break 'run;
            }
            let res = env.step(exec)?;
            if !res.reward.is_finite() || !res.observation.is_finite() {
                let reason = format!("non-finite reward or observation at step {step}");
                emit(&mut sink, &Record::Abort { step, reason: reason.clone() })?;
                log.aborted = Some(reason);
                break 'run;
            }
            step += 1;
            length += 1;
            ret += res.reward;
            if tc.log_steps {
                let rec = StepRecord { step, episode, reward: res.reward, executed: exec.0, residual: u.0 };
                emit(&mut sink, &Record::Step(rec))?;
                log.steps.push(rec);
            }
            if let Some(a) = agent.as_mut() {
                buffer.store(Transition {
                    s,
                    u: u.0.to_vec(),
                    r: res.reward,
                    s2: tc.scale(&res.observation),
                    done: res.terminal,
                });
                if buffer.len() >= spec.agent.learning_starts.max(1) {
                    if let Err(e) = a.train_step(&buffer, &mut update_rng) {
                        if let Error::NonFinite(what) = &e {
                            let reason = format!("non-finite {what} at step {step}");
                            emit(&mut sink, &Record::Abort { step, reason: reason.clone() })?;
                            log.aborted = Some(reason);
                            break 'run;
                        }
                        return Err(e);
                    }
                }
            }
            obs = res.observation;
            let finished = res.done || step >= tc.total_steps;
            if finished {
                let w = env.world();
                let rec = EpisodeRecord {
                    episode,
                    step,
                    length,
                    ret,
                    success: res.success,
                    toppled: res.toppled,
                    left_tilt: w.left_block.tilt,
                    right_tilt: w.right_block.tilt,
                };
                emit(&mut sink, &Record::Episode(rec))?;
                log.episodes.push(rec);
            }
            if step % tc.eval_interval == 0 {
                let e = run_eval(&agent, step)?;
                emit(&mut sink, &Record::Eval(e))?;
                log.evals.push(e);
            }
            if finished {
                break;
            }
        }
        episode += 1;
    }
    if let Some(w) = sink.as_deref_mut() {
        w.flush()?;
    }
    Ok(TrainOutcome { log, agent, buffer })
}
