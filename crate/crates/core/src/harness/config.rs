//! Experiment configuration files.
//!
//! A config is a TOML document. Every section is optional and falls back to
//! the defaults of the module it configures; unknown keys are rejected so
//! typos fail loudly. `configs/` ships one file per experiment with every
//! value written out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::PControllerParams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::physics::PhysicsParams;
use crate::residual::{Mode, RunSpec, TrainConfig};
use crate::td3::Td3Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SampleEfficiency,
    VariationSweep,
    NoiseSweep,
    BiasSweep,
    Transfer,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SampleEfficiency => "sample_efficiency",
            ExperimentKind::VariationSweep => "variation_sweep",
            ExperimentKind::NoiseSweep => "noise_sweep",
            ExperimentKind::BiasSweep => "bias_sweep",
            ExperimentKind::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Self::SampleEfficiency, Self::VariationSweep, Self::NoiseSweep, Self::BiasSweep, Self::Transfer]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// Sim-to-sim transfer: train in the configured environment, then continue
/// in a perturbed copy of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Training steps in the source environment.
    pub source_steps: u64,
    /// Training steps in the target environment.
    pub target_steps: u64,
    /// Lateral shift of the whole assembly (gap, goal and start pose) in the
    /// target environment (m).
    pub shift_x: f64,
    /// Multiplier on `friction_threshold` in the target environment.
    pub friction_scale: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { source_steps: 30_000, target_steps: 20_000, shift_x: 0.005, friction_scale: 0.5 }
    }
}

impl TransferConfig {
    pub fn target_physics(&self, source: &PhysicsParams) -> PhysicsParams {
        PhysicsParams {
            gap_center_x: source.gap_center_x + self.shift_x,
            goal_x: source.goal_x + self.shift_x,
            start_x: source.start_x + self.shift_x,
            friction_threshold: source.friction_threshold * self.friction_scale,
            ..source.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Rotation ranges, noise stds or biases, depending on `kind`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    pub output_dir: PathBuf,
    /// Runs executed in parallel.
    #[serde(default = "one")]
    pub workers: usize,
    /// Trailing evaluations averaged into a run's final score.
    #[serde(default = "one")]
    pub final_evals: usize,
    /// Success rate that counts as solved, and for how many consecutive
    /// evaluations it must hold.
    #[serde(default = "solve_threshold")]
    pub solve_threshold: f64,
    #[serde(default = "two")]
    pub solve_sustain: usize,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub controller: PControllerParams,
    /// Agent for residual runs.
    #[serde(default)]
    pub agent: Td3Config,
    /// Agent for pure RL runs; defaults to `agent`.
    #[serde(default)]
    pub pure_rl_agent: Option<Td3Config>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn solve_threshold() -> f64 {
    0.9
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn agent_for(&self, mode: Mode) -> &Td3Config {
        match (mode, &self.pure_rl_agent) {
            (Mode::PureRl, Some(a)) => a,
            _ => &self.agent,
        }
    }

    /// Run spec for one mode and seed under this config's modules.
    pub fn spec(&self, mode: Mode, seed: u64) -> RunSpec {
        RunSpec {
            mode,
            seed,
            physics: self.physics.clone(),
            env: self.env.clone(),
            controller: self.controller.clone(),
            agent: self.agent_for(mode).clone(),
            train: self.train.clone(),
            init_checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.workers == 0 || self.final_evals == 0 || self.solve_sustain == 0 {
            return bad("workers, final_evals and solve_sustain must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.solve_threshold) {
            return bad("solve_threshold must be in [0, 1]".into());
        }
        self.physics.validate()?;
        self.env.validate(&self.physics)?;
        self.controller.validate()?;
        self.agent.validate()?;
        if let Some(a) = &self.pure_rl_agent {
            a.validate()?;
        }
        self.train.validate()?;

        let needs_sweep = matches!(
            self.kind,
            ExperimentKind::VariationSweep | ExperimentKind::NoiseSweep | ExperimentKind::BiasSweep
        );
        if needs_sweep && self.sweep.is_empty() {
            return bad(format!("{} needs at least one sweep value", self.kind.name()));
        }
        if !needs_sweep && !self.sweep.is_empty() {
            return bad(format!("{} takes no sweep values", self.kind.name()));
        }
        let critical = self.physics.tilt_critical();
        for &v in &self.sweep {
            let ok = match self.kind {
                ExperimentKind::VariationSweep => (0.0..critical).contains(&v),
                ExperimentKind::NoiseSweep => (0.0..=1.0).contains(&v),
                ExperimentKind::BiasSweep => (-1.0..=1.0).contains(&v),
                _ => true,
            };
            if !ok {
                return bad(format!("sweep value {v} outside the documented range for {}", self.kind.name()));
            }
        }
        if self.kind == ExperimentKind::NoiseSweep && self.env.noise.bias != 0.0 {
            return bad("noise_sweep requires env.noise.bias = 0".into());
        }
        if self.kind == ExperimentKind::Transfer {
            let t = &self.transfer;
            if t.source_steps == 0 || t.target_steps == 0 {
                return bad("transfer step budgets must be >= 1".into());
            }
            let target = t.target_physics(&self.physics);
            target.validate()?;
            self.env.validate(&target)?;
        }
        Ok(())
    }
}

/// Environment description for evaluating a saved policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// `residual` adds the hand controller; `pure_rl` does not.
    #[serde(default = "residual_mode")]
    pub mode: Mode,
    /// Base seed of the evaluation episodes.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub controller: PControllerParams,
    /// Only the observation scales are used.
    #[serde(default)]
    pub train: TrainConfig,
}

fn residual_mode() -> Mode {
    Mode::Residual
}

impl EvalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.physics.validate()?;
        cfg.env.validate(&cfg.physics)?;
        cfg.controller.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
