//! Oracles shared by the module test suites and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use residual_core::env::Observation;
use residual_core::geometry::{Polygon, Vec2};
use residual_core::physics::{block_polygon, held_polygon, reset_world, step_world};
use residual_core::td3::ActionValue;
use residual_core::*;

// ---- networks ----

/// Straight-line evaluation of one input row, independent of the batched
/// matrix code. Also returns every hidden pre-activation.
pub fn reference_forward(net: &Mlp, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut hidden = Vec::new();
    let layers = net.n_layers();
    for l in 0..layers {
        let (w, b) = net.layer(l);
        let (n_in, n_out) = (net.sizes()[l], net.sizes()[l + 1]);
        let z: Vec<f64> = (0..n_out).map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * a[i]).sum::<f64>()).collect();
        if l + 1 < layers {
            hidden.extend_from_slice(&z);
            a = z.iter().map(|v| v.max(0.0)).collect();
        } else {
            a = match net.output_activation() {
                OutputActivation::Linear => z,
                OutputActivation::Tanh { scale } => z.iter().map(|v| scale * v.tanh()).collect(),
            };
        }
    }
    (a, hidden)
}

pub fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.random_range(1..=4);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let output = if rng.random_bool(0.5) {
        OutputActivation::Linear
    } else {
        OutputActivation::Tanh { scale: rng.random_range(0.5..2.0) }
    };
    Mlp::new(&sizes, output, 1.0, rng).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    // The floor keeps gradients that are zero up to roundoff from dominating.
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst relative error between backward and central differences, over
/// every parameter and input of `draws` random (net, input) pairs.
pub fn max_gradient_error(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let objective = |net: &Mlp, x: &[f64], g: &[f64]| -> f64 {
        net.forward(x).unwrap().0.iter().zip(g).map(|(o, g)| o * g).sum()
    };
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < draws {
        let mut net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Redraw anything sitting on a ReLU kink, where the derivative is undefined.
        if reference_forward(&net, &x).1.iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        done += 1;
        let (_, cache) = net.forward(&x).unwrap();
        let (dparams, dinput) = net.backward(&cache, &g).unwrap();
        for k in 0..net.n_params() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let up = objective(&net, &x, &g);
            net.params_mut()[k] = orig - h;
            let down = objective(&net, &x, &g);
            net.params_mut()[k] = orig;
            worst = worst.max(rel_err(dparams[k], (up - down) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective(&net, &xp, &g) - objective(&net, &xm, &g)) / (2.0 * h);
            worst = worst.max(rel_err(dinput[i], fd));
        }
    }
    worst
}

// ---- TD3 ----

/// Agent on a 1-d state and action with bias-only critics, so every
/// critic value is a constant that the test sets directly.
pub fn constant_critic_agent(cfg: Td3Config, q1: f64, q2: f64) -> Td3Agent {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = Td3Config { hidden: vec![], ..cfg };
    let mut agent = Td3Agent::new(cfg, 1, 1, 1.0, &mut rng).unwrap();
    for (net, q) in [(&mut agent.critic1_target, q1), (&mut agent.critic2_target, q2), (&mut agent.critic1, q1), (&mut agent.critic2, q2)] {
        let p = net.params_mut();
        p.fill(0.0);
        *p.last_mut().unwrap() = q;
    }
    agent
}

pub fn single_batch(s: f64, u: f64, r: f64, s2: f64, done: bool) -> Batch {
    Batch::from_transitions(&[&Transition { s: vec![s], u: vec![u], r, s2: vec![s2], done }])
}

/// Backup for Q'1 = 2, Q'2 = 3, r = 1, gamma = 0.5, no smoothing noise.
pub fn min_backup_target() -> f64 {
    let cfg = Td3Config { gamma: 0.5, target_noise: 0.0, ..Td3Config::default() };
    let agent = constant_critic_agent(cfg, 2.0, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    agent.compute_target(&single_batch(0.4, 0.1, 1.0, -0.2, false), &mut rng).unwrap()[0]
}

/// Largest |y - r| over random transitions with gamma = 0.
pub fn gamma_zero_gap() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = Td3Config { gamma: 0.0, hidden: vec![16], ..Td3Config::default() };
    let agent = Td3Agent::new(cfg, 3, 2, 0.5, &mut rng).unwrap();
    let ts: Vec<Transition> = (0..64)
        .map(|_| Transition {
            s: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            u: (0..2).map(|_| rng.random_range(-0.5..0.5)).collect(),
            r: rng.random_range(-5.0..5.0),
            s2: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: rng.random_bool(0.5),
        })
        .collect();
    let batch = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
    let y = agent.compute_target(&batch, &mut rng).unwrap();
    y.iter().zip(&batch.r).map(|(y, r)| (y - r).abs()).fold(0.0, f64::max)
}

/// `Q(s, u) = -(u - 0.3)^2` for every action component.
pub struct QuadraticCritic;

impl ActionValue for QuadraticCritic {
    fn action_gradient(&self, _s: &[f64], u: &[f64], _n: usize) -> Result<Vec<f64>> {
        Ok(u.iter().map(|u| -2.0 * (u - 0.3)).collect())
    }
}

/// Actor output after repeated updates against [`QuadraticCritic`], over a
/// spread of states.
pub fn quadratic_actor_outputs() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = Td3Config { actor_lr: 1e-2, hidden: vec![16, 16], ..Td3Config::default() };
    let mut agent = Td3Agent::new(cfg, 2, 1, 1.0, &mut rng).unwrap();
    let states: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..2000 {
        agent.update_actor_with(&states, 32, &QuadraticCritic).unwrap();
    }
    agent.actor.predict(&states, 32).unwrap()
}

fn distance(a: &Mlp, b: &Mlp) -> f64 {
    a.params().iter().zip(b.params()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest deviation of the target-to-live distance ratio from `(1 - tau)^k`
/// over `k = 1..=steps`, with the live networks frozen.
pub fn polyak_decay_error(tau: f64, steps: i32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = Td3Config { tau, ..Td3Config::default() };
    let mut agent = Td3Agent::new(cfg.clone(), 4, 2, 1.0, &mut rng).unwrap();
    let other = Td3Agent::new(cfg, 4, 2, 1.0, &mut rng).unwrap();
    agent.actor_target = other.actor.clone();
    agent.critic1_target = other.critic1.clone();
    agent.critic2_target = other.critic2.clone();
    let d0 = [
        distance(&agent.actor_target, &agent.actor),
        distance(&agent.critic1_target, &agent.critic1),
        distance(&agent.critic2_target, &agent.critic2),
    ];
    let mut worst = 0.0f64;
    for k in 1..=steps {
        agent.polyak_update().unwrap();
        let d = [
            distance(&agent.actor_target, &agent.actor),
            distance(&agent.critic1_target, &agent.critic1),
            distance(&agent.critic2_target, &agent.critic2),
        ];
        for (d, d0) in d.iter().zip(d0) {
            worst = worst.max((d / d0 - (1.0 - tau).powi(k)).abs());
        }
    }
    worst
}

// ---- physics ----

pub fn place_held(w: &mut WorldState, center: Vec2, p: &PhysicsParams) {
    w.gripper.x_pos = center.x;
    w.gripper.z_pos = center.z + p.gripper_offset();
}

/// Minimum translation distance found by sweeping directions and overlapping
/// the projections. Sampling only misses the exact minimum from above, so a
/// small result proves a small true penetration.
pub fn brute_force_depth(a: &Polygon, b: &Polygon, directions: usize) -> f64 {
    let project = |poly: &Polygon, d: Vec2| {
        poly.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let t = v.dot(d);
            (lo.min(t), hi.max(t))
        })
    };
    let mut best = f64::INFINITY;
    for k in 0..directions {
        let angle = PI * k as f64 / directions as f64;
        let d = Vec2::new(angle.cos(), angle.sin());
        let (a0, a1) = project(a, d);
        let (b0, b1) = project(b, d);
        let overlap = a1.min(b1) - a0.max(b0);
        if overlap <= 0.0 {
            return 0.0;
        }
        best = best.min(overlap);
    }
    best
}

/// Overlap area by counting grid cells inside both polygons.
pub fn brute_force_overlap_area(a: &Polygon, b: &Polygon, cell: f64) -> f64 {
    let inside = |poly: &Polygon, p: Vec2| {
        let n = poly.vertices.len();
        (0..n).all(|i| {
            let (u, v) = (poly.vertices[i], poly.vertices[(i + 1) % n]);
            (v - u).cross(p - u) >= 0.0
        })
    };
    let bounds = |f: fn(&Vec2) -> f64| {
        a.vertices.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
    };
    let (x0, x1) = bounds(|v| v.x);
    let (z0, z1) = bounds(|v| v.z);
    let mut count = 0usize;
    let mut x = x0 + 0.5 * cell;
    while x < x1 {
        let mut z = z0 + 0.5 * cell;
        while z < z1 {
            let p = Vec2::new(x, z);
            if inside(a, p) && inside(b, p) {
                count += 1;
            }
            z += cell;
        }
        x += cell;
    }
    count as f64 * cell * cell
}

/// Grid tilts on (-pi/2, pi/2) where the topple flag after one passive step
/// disagrees with `|tilt| > atan(w/h)`, for either block.
pub fn topple_grid_mismatches(points: usize) -> usize {
    let p = PhysicsParams::default();
    let critical = (p.block_width / p.block_height).atan();
    let mut bad = 0;
    for i in 0..points {
        let tilt = -FRAC_PI_2 + PI * (i as f64 + 0.5) / points as f64;
        for side in [Side::Left, Side::Right] {
            let mut w = reset_world(&p, 0, 0.0, RotationMode::Uniform).unwrap();
            match side {
                Side::Left => w.left_block.tilt = tilt,
                Side::Right => w.right_block.tilt = tilt,
            }
            let b = *step_world(&w, Vec2::ZERO, &p).block(side);
            let expect = tilt.abs() > critical;
            let consistent = b.toppled == expect && (!b.toppled || b.tilt == FRAC_PI_2.copysign(tilt));
            bad += usize::from(!consistent);
        }
    }
    bad
}

/// Steps random near-contact configurations once and measures the
/// resulting penetration by brute force. Returns (worst depth, number of
/// draws whose commanded pose overlapped a block).
pub fn random_contact_penetration(draws: usize, seed: u64) -> (f64, usize) {
    let p = PhysicsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut contacts) = (0.0f64, 0);
    for _ in 0..draws {
        let mut w = reset_world(&p, 0, 0.0, RotationMode::Uniform).unwrap();
        w.left_block.tilt = rng.random_range(-0.3..0.3);
        w.right_block.tilt = rng.random_range(-0.3..0.3);
        // Random pose; if it overlaps a block, lift it until it just clears,
        // which leaves it close to contact.
        let mut held = Vec2::new(rng.random_range(-0.07..0.07), rng.random_range(0.08..0.2));
        place_held(&mut w, held, &p);
        while w.max_penetration(&p) > 0.0 {
            held.z += 0.0005;
            place_held(&mut w, held, &p);
        }
        let cmd = Vec2::new(rng.random_range(-0.005..0.005), rng.random_range(-0.005..0.005));
        let next = step_world(&w, cmd, &p);
        let target = held_polygon(held + cmd, &p);
        if [Side::Left, Side::Right].iter().any(|&s| brute_force_depth(&target, &block_polygon(s, w.block(s), &p), 720) > 0.0) {
            contacts += 1;
        }
        let h = held_polygon(next.held_center(&p), &p);
        for side in [Side::Left, Side::Right] {
            worst = worst.max(brute_force_depth(&h, &block_polygon(side, next.block(side), &p), 36_000));
        }
    }
    (worst, contacts)
}

/// Two 200-step seeded rollouts under a wiggling P controller, compared
/// field by field at the bit level.
pub fn seeded_rollout_is_bitwise_repeatable() -> bool {
    let p = PhysicsParams::default();
    let run = || {
        let mut w = reset_world(&p, 11, 0.3, RotationMode::Uniform).unwrap();
        let mut ctrl = PController::new(PControllerParams::default(), 0.005).unwrap();
        let mut trace = Vec::new();
        for k in 0..200 {
            let a = ctrl.act(&Observation::from_world(&w, &p));
            let wiggle = 0.003 * ((k as f64) * 0.7).sin();
            w = step_world(&w, a.to_vec2() + Vec2::new(wiggle, 0.0), &p);
            trace.push(w.clone());
        }
        trace
    };
    let bits = |w: &WorldState| {
        [
            w.gripper.x_pos,
            w.gripper.z_pos,
            w.gripper.contact_force_z,
            w.left_block.x_pos,
            w.left_block.tilt,
            w.right_block.x_pos,
            w.right_block.tilt,
        ]
        .map(f64::to_bits)
    };
    let (a, b) = (run(), run());
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| bits(x) == bits(y) && x == y)
}

// ---- residual loop ----

/// Residual spec whose actor is exactly zero and never trained, with
/// exploration off.
pub fn frozen_zero_residual(seed: u64, steps: u64, env: EnvConfig) -> RunSpec {
    RunSpec {
        mode: Mode::Residual,
        seed,
        physics: PhysicsParams::default(),
        env,
        controller: PControllerParams::default(),
        agent: Td3Config {
            actor_final_init: 0.0,
            exploration_std: 0.0,
            warmup_steps: 0,
            learning_starts: steps as usize + 1,
            ..Td3Config::default()
        },
        train: TrainConfig { total_steps: steps, eval_interval: steps, eval_episodes: 2, log_steps: true, ..TrainConfig::default() },
        init_checkpoint: None,
    }
}

/// Runs the zero-actor residual spec and the matching hand-only spec and
/// reports whether every step and episode record agrees bitwise.
pub fn superposition_holds(seed: u64, steps: u64, env: EnvConfig) -> bool {
    let res = frozen_zero_residual(seed, steps, env);
    let hand = RunSpec { mode: Mode::HandOnly, ..res.clone() };
    let a = train::<std::io::Sink>(&res, None).unwrap().log;
    let b = train::<std::io::Sink>(&hand, None).unwrap().log;
    let bits = |l: &TrainLog| -> Vec<u64> {
        l.steps
            .iter()
            .flat_map(|s| [s.reward, s.executed[0], s.executed[1]].map(f64::to_bits))
            .chain(l.episodes.iter().flat_map(|e| [e.ret, e.left_tilt, e.right_tilt].map(f64::to_bits)))
            .collect()
    };
    !a.steps.is_empty() && bits(&a) == bits(&b) && a.episodes == b.episodes && a.evals == b.evals
}
