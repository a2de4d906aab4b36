//! Residual reinforcement learning for contact-rich insertion.
//!
//! A hand-engineered proportional controller is superposed with a learned
//! residual policy trained by TD3 in a quasi-static planar block-assembly
//! simulation.

pub mod controller;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod physics;
pub mod residual;
pub mod seeding;
pub mod td3;

pub use controller::{PController, PControllerParams};
pub use env::{Action, Env, EnvConfig, NoiseParams, Observation, RewardParams, RewardVariant, StepResult, ACT_DIM, OBS_DIM};
pub use error::{Error, Result};
pub use nn::{Mlp, OptimState, OutputActivation};
pub use physics::{BlockState, GripperState, PhysicsParams, RotationMode, Side, WorldState};
pub use td3::{ActionMode, Batch, ReplayBuffer, Td3Agent, Td3Config, Transition};
pub use residual::{compose, evaluate, train, EvalResult, Mode, Policy, Record, RunSpec, TrainConfig, TrainLog, TrainOutcome};
