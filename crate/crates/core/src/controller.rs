//! Hand-engineered proportional waypoint controller.
//!
//! The controller only reads robot-state entries of the observation: the
//! held-block pose (rigidly attached to the gripper) and the goal. Block
//! tilts and positions are never consulted.

use serde::{Deserialize, Serialize};

use crate::env::{obs_index, Action, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PControllerParams {
    /// Proportional gain (1/step).
    pub gain: f64,
    /// Targets for the held block as offsets from the observed goal; the
    /// last one must be `[0, 0]`, i.e. the goal itself.
    pub waypoints: Vec<[f64; 2]>,
    /// Distance at which the controller moves on to the next waypoint (m).
    pub waypoint_tol: f64,
}

impl Default for PControllerParams {
    fn default() -> Self {
        Self { gain: 0.5, waypoints: vec![[0.0, 0.11], [0.0, 0.0]], waypoint_tol: 0.002 }
    }
}

impl PControllerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config("controller.gain must be > 0".into()));
        }
        if !(self.waypoint_tol > 0.0) {
            return Err(Error::Config("controller.waypoint_tol must be > 0".into()));
        }
        match self.waypoints.last() {
            Some(&[x, z]) if x == 0.0 && z == 0.0 => Ok(()),
            _ => Err(Error::Config("controller.waypoints must end at the goal offset [0, 0]".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PController {
    params: PControllerParams,
    a_max: f64,
    index: usize,
}

impl PController {
    pub fn new(params: PControllerParams, a_max: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, a_max, index: 0 })
    }

    pub fn params(&self) -> &PControllerParams {
        &self.params
    }

    pub fn waypoint_index(&self) -> usize {
        self.index
    }

    /// Back to the first waypoint; call at every episode start.
    pub fn reset(&mut self) {
        self.index = 0;
    }

    fn error_to(&self, obs: &Observation, index: usize) -> (f64, f64) {
        let o = &obs.0;
        let [ox, oz] = self.params.waypoints[index];
        (o[obs_index::GOAL_X] + ox - o[obs_index::HELD_X], o[obs_index::GOAL_Z] + oz - o[obs_index::HELD_Z])
    }

    /// `clip(gain * (waypoint - position), a_max)`, advancing through the
    /// waypoint list as each one is reached.
    pub fn act(&mut self, obs: &Observation) -> Action {
        let last = self.params.waypoints.len() - 1;
        let mut err = self.error_to(obs, self.index);
        while self.index < last && err.0.hypot(err.1) < self.params.waypoint_tol {
            self.index += 1;
            err = self.error_to(obs, self.index);
        }
        Action::new(self.params.gain * err.0, self.params.gain * err.1).clip(self.a_max)
    }
}
