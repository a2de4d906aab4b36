//! Episodic wrapper over the simulator: observations, rewards, actuator
//! noise and termination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::physics::{self, PhysicsParams, RotationMode, WorldState};
use crate::seeding::derive_seed;

pub const OBS_DIM: usize = 11;
pub const ACT_DIM: usize = 2;

/// Entry indices of [`Observation`].
pub mod obs_index {
    pub const GRIPPER_X: usize = 0;
    pub const GRIPPER_Z: usize = 1;
    pub const FORCE_Z: usize = 2;
    pub const LEFT_TILT: usize = 3;
    pub const RIGHT_TILT: usize = 4;
    pub const LEFT_X: usize = 5;
    pub const RIGHT_X: usize = 6;
    pub const HELD_X: usize = 7;
    pub const HELD_Z: usize = 8;
    pub const GOAL_X: usize = 9;
    pub const GOAL_Z: usize = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn from_world(world: &WorldState, params: &PhysicsParams) -> Self {
        let held = world.held_center(params);
        Self([
            world.gripper.x_pos,
            world.gripper.z_pos,
            world.gripper.contact_force_z,
            world.left_block.tilt,
            world.right_block.tilt,
            world.left_block.x_pos,
            world.right_block.x_pos,
            held.x,
            held.z,
            params.goal_x,
            params.goal_z,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Cartesian displacement command `(dx, dz)` in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action(pub [f64; ACT_DIM]);

impl Action {
    pub const ZERO: Action = Action([0.0; ACT_DIM]);

    pub fn new(dx: f64, dz: f64) -> Self {
        Self([dx, dz])
    }

    pub fn clip(self, a_max: f64) -> Self {
        Self(self.0.map(|v| v.clamp(-a_max, a_max)))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_vec2(self) -> Vec2 {
        Vec2::new(self.0[0], self.0[1])
    }
}

/// Gaussian actuator noise `N(bias, std^2)` added to each command
/// component. Bias and std are in units of `a_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub bias: f64,
    pub std: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { bias: 0.0, std: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Held-block distance plus standing-block tilt penalty.
    Sim,
    /// Adds standing-block displacement and yaw penalties, measured from
    /// the end effector.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Tilt penalty weight.
    pub lambda: f64,
    /// Standing-block displacement weight.
    pub mu_w: f64,
    /// Yaw penalty weight.
    pub beta: f64,
    pub variant: RewardVariant,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { lambda: 1.0, mu_w: 10.0, beta: 1.0, variant: RewardVariant::Sim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Steps per episode.
    pub horizon: u64,
    /// Per-axis action bound (m).
    pub a_max: f64,
    /// Success tolerance on held-block and standing-block positions (m).
    pub pos_tol: f64,
    /// Success tolerance on standing-block tilt (rad).
    pub tilt_tol: f64,
    pub rotation_range: f64,
    pub rotation_mode: RotationMode,
    pub reward: RewardParams,
    pub noise: NoiseParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            a_max: 0.005,
            pos_tol: 0.002,
            tilt_tol: 0.05,
            rotation_range: 0.0,
            rotation_mode: RotationMode::Uniform,
            reward: RewardParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, physics: &PhysicsParams) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("env.horizon must be >= 1".into()));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(Error::Config("env.a_max must be > 0".into()));
        }
        if !(self.pos_tol > 0.0 && self.tilt_tol > 0.0) {
            return Err(Error::Config("env.pos_tol and env.tilt_tol must be > 0".into()));
        }
        let r = &self.reward;
        if !(r.lambda >= 0.0 && r.mu_w >= 0.0 && r.beta >= 0.0) {
            return Err(Error::Config("reward weights must be >= 0".into()));
        }
        if !(self.noise.std >= 0.0) || !self.noise.bias.is_finite() {
            return Err(Error::Config("env.noise.std must be >= 0 and bias finite".into()));
        }
        let critical = physics.tilt_critical();
        if !(self.rotation_range >= 0.0 && self.rotation_range < critical) {
            return Err(Error::RotationRange { range: self.rotation_range, critical });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Episode over: success or horizon reached.
    pub done: bool,
    pub success: bool,
    /// True only for true terminal states; horizon cut-offs are not terminal.
    pub terminal: bool,
    /// Either standing block has toppled at some point in the episode.
    pub toppled: bool,
    /// Command actually sent to the simulator after noise and clipping.
    pub executed: Action,
}

/// Held-block distance to goal plus tilt penalty.
pub fn reward_sim(world: &WorldState, physics: &PhysicsParams, params: &RewardParams) -> f64 {
    let goal = Vec2::new(physics.goal_x, physics.goal_z);
    let dist = (goal - world.held_center(physics)).norm();
    -dist - params.lambda * (world.left_block.tilt.abs() + world.right_block.tilt.abs())
}

/// Extended reward measured from the end effector, with penalties for
/// displaced and yawed standing blocks.
pub fn reward_extended(world: &WorldState, physics: &PhysicsParams, params: &RewardParams) -> f64 {
    let ee_goal = Vec2::new(physics.goal_x, physics.goal_z + physics.gripper_offset());
    let ee = Vec2::new(world.gripper.x_pos, world.gripper.z_pos);
    let tilt = world.left_block.tilt.abs() + world.right_block.tilt.abs();
    let dl = world.left_block.x_pos - physics.nominal_left_x();
    let dr = world.right_block.x_pos - physics.nominal_right_x();
    let yaw = world.left_block.yaw.abs() + world.right_block.yaw.abs();
    -(ee_goal - ee).norm() - params.lambda * tilt - params.mu_w * dl.hypot(dr) - params.beta * yaw
}

pub fn reward(world: &WorldState, physics: &PhysicsParams, params: &RewardParams) -> f64 {
    match params.variant {
        RewardVariant::Sim => reward_sim(world, physics, params),
        RewardVariant::Extended => reward_extended(world, physics, params),
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    physics: PhysicsParams,
    config: EnvConfig,
    world: WorldState,
    noise_rng: ChaCha8Rng,
    steps: u64,
    done: bool,
    toppled: bool,
}

impl Env {
    pub fn new(physics: PhysicsParams, config: EnvConfig) -> Result<Self> {
        physics.validate()?;
        config.validate(&physics)?;
        let world = physics::reset_world(&physics, 0, 0.0, RotationMode::Uniform)?;
        let noise_rng = ChaCha8Rng::seed_from_u64(config.noise.seed);
        Ok(Self { physics, config, world, noise_rng, steps: 0, done: true, toppled: false })
    }

    pub fn physics(&self) -> &PhysicsParams {
        &self.physics
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Start an episode. The actuator-noise stream is re-seeded from the
    /// episode seed and the configured noise seed.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.reset_with(seed, self.config.rotation_range, self.config.rotation_mode)
    }

    pub fn reset_with(&mut self, seed: u64, rotation_range: f64, rotation_mode: RotationMode) -> Result<Observation> {
        self.world = physics::reset_world(&self.physics, seed, rotation_range, rotation_mode)?;
        self.noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.noise.seed, &[seed, 0x6e6f697365]));
        self.steps = 0;
        self.done = false;
        self.toppled = false;
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        Observation::from_world(&self.world, &self.physics)
    }

    /// Executed command `clip(action + nu, a_max)` with `nu ~ N(bias, std^2)`
    /// per component, scaled by `a_max`.
    fn perturb(&mut self, action: Action) -> Action {
        let a_max = self.config.a_max;
        let noise = &self.config.noise;
        let mut out = action.0;
        if noise.std > 0.0 {
            let dist = Normal::new(noise.bias * a_max, noise.std * a_max).expect("std checked at construction");
            for v in out.iter_mut() {
                *v += dist.sample(&mut self.noise_rng);
            }
        } else if noise.bias != 0.0 {
            for v in out.iter_mut() {
                *v += noise.bias * a_max;
            }
        }
        Action(out).clip(a_max)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if !action.is_finite() {
            return Err(Error::NonFinite(format!("action {:?}", action.0)));
        }
        let executed = self.perturb(action);
        self.world = physics::step_world(&self.world, executed.to_vec2(), &self.physics);
        self.steps += 1;
        self.toppled |= self.world.left_block.toppled || self.world.right_block.toppled;
        let reward = reward(&self.world, &self.physics, &self.config.reward);
        let success = physics::is_success(&self.world, &self.physics, self.config.pos_tol, self.config.tilt_tol);
        self.done = success || self.steps >= self.config.horizon;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            success,
            terminal: success,
            toppled: self.toppled,
            executed,
        })
    }
}
