//! Quasi-static planar simulator of the block-insertion world.
//!
//! A gripper holds a block rigidly and moves it in the x–z plane towards a
//! gap between two standing blocks. Each standing block can slide along x
//! and rotate about whichever bottom edge it leans towards. Contacts are
//! resolved once per step by force balance: no velocities are tracked.
//!
//! Sign conventions: a positive tilt moves a block's top towards +x, which
//! is a clockwise rotation when x points right and z points up. Torques are
//! counter-clockwise positive.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersection, penetration, penetration_depth, Penetration, Polygon, Vec2};

/// Gauss–Seidel sweeps over the two standing blocks per step.
const CONTACT_SWEEPS: usize = 4;
/// Samples used when searching for the block motion that clears an overlap.
const SEARCH_SAMPLES: usize = 12;
const BISECTION_ITERS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// Standing block width (m).
    pub block_width: f64,
    /// Standing block height (m).
    pub block_height: f64,
    /// Size of the bevel on the top corner facing the gap (m).
    pub corner_chamfer: f64,
    /// Free space between the two standing blocks (m).
    pub gap_width: f64,
    /// Lateral centre of the gap (m).
    pub gap_center_x: f64,
    pub held_width: f64,
    pub held_height: f64,
    /// Goal position of the held block centre (m).
    pub goal_x: f64,
    pub goal_z: f64,
    /// Lateral force a standing block resists before sliding (N).
    pub friction_threshold: f64,
    /// Coulomb coefficient between the held block and a standing block.
    pub contact_friction: f64,
    /// Normal force per metre of penetration (N/m).
    pub contact_stiffness: f64,
    /// Weight of a standing block (N).
    pub block_weight: f64,
    /// Gravity righting per step for a block leaning at a small angle (rad).
    pub tilt_restore_rate: f64,
    /// Largest contact-driven rotation of a block in one step (rad).
    pub max_tilt_step: f64,
    pub dt: f64,
    pub max_step_displacement: f64,
    /// Largest overlap tolerated after a step (m).
    pub penetration_tol: f64,
    /// Initial gripper pose (m).
    pub start_x: f64,
    pub start_z: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub z_max: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            block_width: 0.04,
            block_height: 0.10,
            corner_chamfer: 0.01,
            gap_width: 0.048,
            gap_center_x: 0.0,
            held_width: 0.04,
            held_height: 0.10,
            goal_x: 0.0,
            goal_z: 0.05,
            friction_threshold: 2.0,
            contact_friction: 0.5,
            contact_stiffness: 1000.0,
            block_weight: 0.5,
            tilt_restore_rate: 0.02,
            max_tilt_step: 0.05,
            dt: 0.05,
            max_step_displacement: 0.005,
            penetration_tol: 1e-4,
            start_x: 0.0,
            start_z: 0.23,
            x_min: -0.15,
            x_max: 0.15,
            z_max: 0.30,
        }
    }
}

impl PhysicsParams {
    /// Tilt at which a block's centre of mass passes over its pivot edge.
    pub fn tilt_critical(&self) -> f64 {
        (self.block_width / self.block_height).atan()
    }

    pub fn nominal_left_x(&self) -> f64 {
        self.gap_center_x - 0.5 * (self.gap_width + self.block_width)
    }

    pub fn nominal_right_x(&self) -> f64 {
        self.gap_center_x + 0.5 * (self.gap_width + self.block_width)
    }

    /// Vertical distance from the held block centre up to the gripper.
    pub fn gripper_offset(&self) -> f64 {
        0.5 * self.held_height
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("block_width", self.block_width),
            ("block_height", self.block_height),
            ("corner_chamfer", self.corner_chamfer),
            ("gap_width", self.gap_width),
            ("held_width", self.held_width),
            ("held_height", self.held_height),
            ("max_step_displacement", self.max_step_displacement),
            ("penetration_tol", self.penetration_tol),
            ("dt", self.dt),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("physics.{name} must be > 0, got {v}")));
            }
        }
        if self.gap_width <= self.held_width {
            return Err(Error::Config(format!(
                "physics.gap_width ({}) must exceed held_width ({})",
                self.gap_width, self.held_width
            )));
        }
        if self.corner_chamfer >= self.block_width.min(self.block_height) {
            return Err(Error::Config("physics.corner_chamfer must be smaller than the block".into()));
        }
        let non_negative = [
            ("friction_threshold", self.friction_threshold),
            ("contact_friction", self.contact_friction),
            ("contact_stiffness", self.contact_stiffness),
            ("block_weight", self.block_weight),
            ("tilt_restore_rate", self.tilt_restore_rate),
            ("max_tilt_step", self.max_tilt_step),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("physics.{name} must be >= 0, got {v}")));
            }
        }
        if !(self.x_min < self.x_max) || self.z_max <= self.held_height {
            return Err(Error::Config("physics workspace bounds are empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Each tilt drawn from U[-r, r].
    Uniform,
    /// Each tilt drawn from {-r, 0, r} with equal probability.
    Discrete3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    /// Lateral centre of the base when upright (m).
    pub x_pos: f64,
    /// Rotation about y; positive moves the top towards +x.
    pub tilt: f64,
    /// Rotation about z. Static in this planar model.
    pub yaw: f64,
    pub toppled: bool,
}

impl BlockState {
    pub fn upright(x_pos: f64) -> Self {
        Self { x_pos, tilt: 0.0, yaw: 0.0, toppled: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub x_pos: f64,
    pub z_pos: f64,
    /// Vertical reaction on the gripper from the most recent step (N).
    pub contact_force_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: GripperState,
    pub left_block: BlockState,
    pub right_block: BlockState,
    pub step_count: u64,
}

impl WorldState {
    /// Centre of the held block.
    pub fn held_center(&self, params: &PhysicsParams) -> Vec2 {
        Vec2::new(self.gripper.x_pos, self.gripper.z_pos - params.gripper_offset())
    }

    pub fn block(&self, side: Side) -> &BlockState {
        match side {
            Side::Left => &self.left_block,
            Side::Right => &self.right_block,
        }
    }

    fn block_mut(&mut self, side: Side) -> &mut BlockState {
        match side {
            Side::Left => &mut self.left_block,
            Side::Right => &mut self.right_block,
        }
    }

    /// Deepest overlap between the held block and either standing block.
    pub fn max_penetration(&self, params: &PhysicsParams) -> f64 {
        let held = held_polygon(self.held_center(params), params);
        [Side::Left, Side::Right]
            .iter()
            .map(|&s| penetration_depth(&held, &block_polygon(s, self.block(s), params)))
            .fold(0.0, f64::max)
    }
}

/// Pose of the held block during contact resolution, with the displacement
/// it underwent this step (used for the sliding-friction direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldPose {
    pub center: Vec2,
    pub motion: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactResolution {
    pub held: HeldPose,
    pub block: BlockState,
    /// Magnitude of the normal force at first contact (N).
    pub normal_force: f64,
    /// Unit contact normal pointing from the standing block to the held block.
    pub normal: Vec2,
}

impl ContactResolution {
    /// Vertical component of the reaction felt by the gripper.
    pub fn force_z(&self) -> f64 {
        self.normal_force * self.normal.z
    }
}

pub fn held_polygon(center: Vec2, params: &PhysicsParams) -> Polygon {
    Polygon::rect(center, params.held_width, params.held_height)
}

/// Outline of a standing block, with the chamfer on the top corner that
/// faces the gap.
pub fn block_polygon(side: Side, block: &BlockState, params: &PhysicsParams) -> Polygon {
    let (hw, h, c) = (0.5 * params.block_width, params.block_height, params.corner_chamfer);
    let local = match side {
        Side::Left => [
            Vec2::new(-hw, 0.0),
            Vec2::new(hw, 0.0),
            Vec2::new(hw, h - c),
            Vec2::new(hw - c, h),
            Vec2::new(-hw, h),
        ],
        Side::Right => [
            Vec2::new(-hw, 0.0),
            Vec2::new(hw, 0.0),
            Vec2::new(hw, h),
            Vec2::new(-hw + c, h),
            Vec2::new(-hw, h - c),
        ],
    };
    let pivot = Vec2::new(if block.tilt >= 0.0 { hw } else { -hw }, 0.0);
    let base = Vec2::new(block.x_pos, 0.0);
    let vertices = local
        .iter()
        .map(|&v| base + pivot + (v - pivot).rotate(-block.tilt))
        .collect();
    Polygon::new(vertices)
}

/// Gravity torque about the pivot edge, counter-clockwise positive.
/// It always acts towards upright while `|tilt|` is below critical.
fn gravity_torque(tilt: f64, params: &PhysicsParams) -> f64 {
    let a = tilt.abs();
    let arm = 0.5 * params.block_width * a.cos() - 0.5 * params.block_height * a.sin();
    let m = params.block_weight * arm;
    if tilt >= 0.0 {
        m
    } else {
        -m
    }
}

/// Direction in which a contact force rotates a block, if at all:
/// `+1.0` increases tilt, `-1.0` decreases it.
fn rotation_direction(
    side_block: &BlockState,
    point: Vec2,
    force: Vec2,
    params: &PhysicsParams,
) -> Option<f64> {
    let hw = 0.5 * params.block_width;
    let plus = Vec2::new(side_block.x_pos + hw, 0.0);
    let minus = Vec2::new(side_block.x_pos - hw, 0.0);
    let torque = |pivot: Vec2| (point - pivot).cross(force);
    let theta = side_block.tilt;
    if theta != 0.0 {
        let pivot = if theta > 0.0 { plus } else { minus };
        // Net moment in the direction of increasing tilt.
        let tip = -(torque(pivot) + gravity_torque(theta, params)) * theta.signum();
        if tip > 0.0 {
            Some(theta.signum())
        } else if tip < 0.0 {
            Some(-theta.signum())
        } else {
            None
        }
    } else {
        let g0 = params.block_weight * hw;
        if torque(plus) + g0 < 0.0 {
            Some(1.0)
        } else if torque(minus) - g0 > 0.0 {
            Some(-1.0)
        } else {
            None
        }
    }
}

/// Smallest step in `[0, max]` that minimises `depth`. Returns `None` when no
/// step improves on the current depth.
fn search_step(max: f64, depth: impl Fn(f64) -> f64) -> Option<f64> {
    if max <= 0.0 {
        return None;
    }
    let d0 = depth(0.0);
    let clear = 1e-12;
    if depth(max) <= clear {
        let (mut lo, mut hi) = (0.0, max);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if depth(mid) <= clear {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Some(hi);
    }
    let (best_s, best_d) = (1..=SEARCH_SAMPLES)
        .map(|i| {
            let s = max * i as f64 / SEARCH_SAMPLES as f64;
            (s, depth(s))
        })
        .fold((0.0, d0), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    (best_d < d0).then_some(best_s)
}

/// Quasi-static resolution of one held-block/standing-block contact.
///
/// The standing block yields first: it rotates when the contact moment
/// about its pivot edge beats gravity (or rights it), otherwise it slides
/// when the lateral force beats the friction threshold. Whatever overlap
/// remains is removed by pushing the held block out along the contact
/// normal.
pub fn resolve_contact(
    held: HeldPose,
    block: &BlockState,
    side: Side,
    params: &PhysicsParams,
) -> ContactResolution {
    let held_poly = held_polygon(held.center, params);
    let block_poly = block_polygon(side, block, params);
    let none = ContactResolution { held, block: *block, normal_force: 0.0, normal: Vec2::ZERO };
    let Some(pen) = penetration(&held_poly, &block_poly) else {
        return none;
    };
    let overlap = intersection(&held_poly, &block_poly);
    if pen.depth <= 0.0 || overlap.len() < 3 {
        return none;
    }
    let n = pen.normal;
    let normal_force = params.contact_stiffness * pen.depth;
    let mut out = ContactResolution { held, block: *block, normal_force, normal: n };

    if !block.toppled {
        let tangent = Vec2::new(n.z, -n.x);
        let slip = held.motion.dot(tangent);
        let friction = if slip.abs() > 1e-12 {
            tangent * (params.contact_friction * normal_force * slip.signum())
        } else {
            Vec2::ZERO
        };
        let force = -n * normal_force + friction;
        let point = overlap.centroid();
        let depth_with = |b: &BlockState| penetration_depth(&held_poly, &block_polygon(side, b, params));

        let mut moved = false;
        if let Some(dir) = rotation_direction(block, point, force, params) {
            let righting = dir * block.tilt < 0.0;
            let max = if righting {
                params.max_tilt_step.min(block.tilt.abs())
            } else {
                params.max_tilt_step
            };
            let rotated = |s: f64| BlockState { tilt: block.tilt + dir * s, ..*block };
            if let Some(s) = search_step(max, |s| depth_with(&rotated(s))) {
                out.block = rotated(s);
                moved = true;
            }
        }
        if !moved && force.x.abs() > params.friction_threshold {
            let dir = force.x.signum();
            let slid = |s: f64| BlockState { x_pos: block.x_pos + dir * s, ..*block };
            if let Some(s) = search_step(params.max_step_displacement, |s| depth_with(&slid(s))) {
                out.block = slid(s);
            }
        }
    }

    let block_poly = block_polygon(side, &out.block, params);
    if let Some(rest) = penetration(&held_poly, &block_poly) {
        out.held.center = push_out(held, &block_poly, rest, params);
    }
    out
}

/// Where the held block ends up after leftover overlap is removed. A push
/// inside the friction cone of the contact sticks, so the gripper stops
/// short along its own path; outside the cone it slides off along the
/// contact normal.
fn push_out(held: HeldPose, block_poly: &Polygon, rest: Penetration, params: &PhysicsParams) -> Vec2 {
    let along_normal = held.center + rest.normal * rest.depth;
    let speed = held.motion.norm();
    if speed <= 1e-12 {
        return along_normal;
    }
    let back = -held.motion * (1.0 / speed);
    let cos = back.dot(rest.normal);
    if cos < 1.0 / params.contact_friction.hypot(1.0) {
        return along_normal;
    }
    let depth_at = |d: f64| penetration_depth(&held_polygon(held.center + back * d, params), block_poly);
    let reach = speed + rest.depth / cos;
    if depth_at(reach) > 1e-12 {
        return along_normal;
    }
    let (mut lo, mut hi) = (0.0, reach);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if depth_at(mid) <= 1e-12 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    held.center + back * hi
}

/// Fresh episode: gripper at its start pose with the held block attached,
/// both standing blocks at their nominal places with random tilts.
pub fn reset_world(
    params: &PhysicsParams,
    rng_seed: u64,
    rotation_range: f64,
    rotation_mode: RotationMode,
) -> Result<WorldState> {
    let critical = params.tilt_critical();
    if !(rotation_range >= 0.0 && rotation_range < critical) {
        return Err(Error::RotationRange { range: rotation_range, critical });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = || -> f64 {
        if rotation_range == 0.0 {
            return 0.0;
        }
        match rotation_mode {
            RotationMode::Uniform => rng.random_range(-rotation_range..=rotation_range),
            RotationMode::Discrete3 => [-rotation_range, 0.0, rotation_range][rng.random_range(0..3)],
        }
    };
    let left_tilt = draw();
    let right_tilt = draw();
    Ok(WorldState {
        gripper: GripperState { x_pos: params.start_x, z_pos: params.start_z, contact_force_z: 0.0 },
        left_block: BlockState { tilt: left_tilt, ..BlockState::upright(params.nominal_left_x()) },
        right_block: BlockState { tilt: right_tilt, ..BlockState::upright(params.nominal_right_x()) },
        step_count: 0,
    })
}

fn clamp_held(center: Vec2, params: &PhysicsParams) -> (Vec2, f64) {
    let off = params.gripper_offset();
    let x = center.x.clamp(params.x_min, params.x_max);
    let z = center.z.min(params.z_max - off);
    let floor = 0.5 * params.held_height;
    let table_force = if z < floor { params.contact_stiffness * (floor - z) } else { 0.0 };
    (Vec2::new(x, z.max(floor)), table_force)
}

/// Advance the world by one displacement command.
pub fn step_world(world: &WorldState, command: Vec2, params: &PhysicsParams) -> WorldState {
    let lim = params.max_step_displacement;
    let clip = |v: f64| if v.is_finite() { v.clamp(-lim, lim) } else { 0.0 };
    let command = Vec2::new(clip(command.x), clip(command.z));

    let mut next = world.clone();
    let start = world.held_center(params);
    let (mut center, mut force_z) = clamp_held(start + command, params);
    let motion = center - start;

    let mut loaded = [false; 2];
    for sweep in 0..CONTACT_SWEEPS {
        let mut touched = false;
        for (i, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let res = resolve_contact(HeldPose { center, motion }, next.block(side), side, params);
            if res.normal_force > 0.0 {
                touched = true;
                loaded[i] = true;
                if sweep == 0 {
                    force_z += res.force_z();
                }
            }
            *next.block_mut(side) = res.block;
            center = clamp_held(res.held.center, params).0;
        }
        if !touched {
            break;
        }
    }

    let critical = params.tilt_critical();
    for side in [Side::Left, Side::Right] {
        let b = next.block_mut(side);
        if !b.toppled && b.tilt.abs() > critical {
            b.toppled = true;
            b.tilt = FRAC_PI_2.copysign(b.tilt);
        }
    }

    // Gravity righting of unloaded blocks, blocked if it would swing a block
    // into the held one. Loaded blocks already had their moment balance
    // settled during contact resolution.
    let held_poly = held_polygon(center, params);
    for (i, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let b = *next.block(side);
        if loaded[i] || b.toppled || b.tilt == 0.0 {
            continue;
        }
        let g = gravity_torque(b.tilt, params).abs() / (params.block_weight * 0.5 * params.block_width).max(1e-300);
        let step = (params.tilt_restore_rate * g).min(b.tilt.abs());
        let relaxed = BlockState { tilt: b.tilt - step.copysign(b.tilt), ..b };
        if penetration_depth(&held_poly, &block_polygon(side, &relaxed, params)) <= penetration_depth(&held_poly, &block_polygon(side, &b, params)) {
            *next.block_mut(side) = relaxed;
        }
    }

    // Toppled blocks are immovable obstacles.
    for side in [Side::Left, Side::Right] {
        let b = *next.block(side);
        if b.toppled {
            if let Some(p) = penetration(&held_polygon(center, params), &block_polygon(side, &b, params)) {
                center = clamp_held(center + p.normal * p.depth, params).0;
            }
        }
    }

    // Contact can deflect the gripper but never carry it beyond its step limit.
    let moved = center - start;
    center = start + Vec2::new(moved.x.clamp(-lim, lim), moved.z.clamp(-lim, lim));

    if next.max_penetration_at(center, params) > params.penetration_tol {
        // Wedged: keep the last non-penetrating held pose.
        center = start;
        next.left_block = world.left_block;
        next.right_block = world.right_block;
        for side in [Side::Left, Side::Right] {
            let b = next.block_mut(side);
            if !b.toppled && b.tilt.abs() > critical {
                b.toppled = true;
                b.tilt = FRAC_PI_2.copysign(b.tilt);
            }
        }
    }

    let moved = center - start;
    next.gripper = GripperState {
        x_pos: world.gripper.x_pos + moved.x,
        z_pos: world.gripper.z_pos + moved.z,
        contact_force_z: force_z,
    };
    next.step_count = world.step_count + 1;
    next
}

impl WorldState {
    fn max_penetration_at(&self, center: Vec2, params: &PhysicsParams) -> f64 {
        let held = held_polygon(center, params);
        [Side::Left, Side::Right]
            .iter()
            .map(|&s| penetration_depth(&held, &block_polygon(s, self.block(s), params)))
            .fold(0.0, f64::max)
    }
}

/// Held block at the goal with both standing blocks upright, in place and
/// not toppled.
pub fn is_success(world: &WorldState, params: &PhysicsParams, pos_tol: f64, tilt_tol: f64) -> bool {
    let held = world.held_center(params);
    let goal = Vec2::new(params.goal_x, params.goal_z);
    let block_ok = |b: &BlockState, nominal: f64| {
        !b.toppled && b.tilt.abs() < tilt_tol && (b.x_pos - nominal).abs() < pos_tol
    };
    (held - goal).norm() < pos_tol
        && block_ok(&world.left_block, params.nominal_left_x())
        && block_ok(&world.right_block, params.nominal_right_x())
}
