use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::error::{Error, Result};

/// Upper bound on collision events resolved inside one `step_physics` call.
const MAX_EVENTS_PER_STEP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    pub n_balls: usize,
    /// Ball radius in arena units.
    pub radius: f64,
    /// Side of the square arena the simulation runs in.
    pub arena_size: f64,
    /// Rendered frame side in pixels.
    pub frame_size: usize,
    /// Initial speed range, arena units per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Physics sub-steps per rendered frame.
    pub substeps: usize,
    pub input_len: usize,
    pub pred_len: usize,
    /// Rejection-sampling budget for non-overlapping initial placement.
    pub max_tries: usize,
}

impl BallConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_balls == 0 {
            return Err(Error::Config("n_balls must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if 2.0 * self.radius >= self.arena_size {
            return Err(Error::Config(format!(
                "radius {} does not fit in arena {}",
                self.radius, self.arena_size
            )));
        }
        if !(0.0 <= self.min_speed && self.min_speed <= self.max_speed) {
            return Err(Error::Config(format!(
                "invalid speed range [{}, {}]",
                self.min_speed, self.max_speed
            )));
        }
        Ok(())
    }
}

impl Default for BallConfig {
    fn default() -> Self {
        Self {
            n_balls: 4,
            radius: 12.0,
            arena_size: 128.0,
            frame_size: 128,
            min_speed: 3.0,
            max_speed: 6.0,
            substeps: 10,
            input_len: 10,
            pred_len: 10,
            max_tries: 10_000,
        }
    }
}

/// Positions and velocities of equal-mass balls in a square arena.
#[derive(Debug, Clone, PartialEq)]
pub struct BallState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub radius: f64,
    pub mass: f64,
    pub arena_size: f64,
}

impl BallState {
    pub fn new(positions: Vec<[f64; 2]>, velocities: Vec<[f64; 2]>, radius: f64, arena_size: f64) -> Self {
        assert_eq!(positions.len(), velocities.len());
        Self {
            positions,
            velocities,
            radius,
            mass: 1.0,
            arena_size,
        }
    }

    pub fn n_balls(&self) -> usize {
        self.positions.len()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| 0.5 * self.mass * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.velocities.iter().fold([0.0, 0.0], |acc, v| {
            [acc[0] + self.mass * v[0], acc[1] + self.mass * v[1]]
        })
    }

    /// Largest pairwise overlap `2r - d`, or 0 if no balls overlap.
    pub fn max_penetration(&self) -> f64 {
        let mut worst = 0f64;
        for i in 0..self.n_balls() {
            for j in i + 1..self.n_balls() {
                let d = dist(self.positions[i], self.positions[j]);
                worst = worst.max(2.0 * self.radius - d);
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct BallTrajectory {
    pub states: Vec<BallState>,
    pub rendered: VideoSequence,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Wall { ball: usize, axis: usize },
    Pair { i: usize, j: usize },
}

fn wall_time(p: f64, v: f64, r: f64, arena: f64) -> Option<f64> {
    if v < 0.0 {
        Some(((r - p) / v).max(0.0))
    } else if v > 0.0 {
        Some(((arena - r - p) / v).max(0.0))
    } else {
        None
    }
}

/// Time until balls `i` and `j` touch while approaching, if they do.
fn pair_time(s: &BallState, i: usize, j: usize) -> Option<f64> {
    let dp = [
        s.positions[i][0] - s.positions[j][0],
        s.positions[i][1] - s.positions[j][1],
    ];
    let dv = [
        s.velocities[i][0] - s.velocities[j][0],
        s.velocities[i][1] - s.velocities[j][1],
    ];
    let b = dot(dp, dv);
    if b >= 0.0 {
        return None;
    }
    let contact = 2.0 * s.radius;
    let c = dot(dp, dp) - contact * contact;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = dot(dv, dv);
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    // Root of a*t^2 + 2b*t + c = 0, written to avoid cancellation.
    Some(c / (-b + disc.sqrt()))
}

fn next_event(s: &BallState, horizon: f64) -> Option<(f64, Event)> {
    let mut best: Option<(f64, Event)> = None;
    let mut consider = |t: f64, e: Event| {
        if t <= horizon && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, e));
        }
    };
    for ball in 0..s.n_balls() {
        for axis in 0..2 {
            if let Some(t) = wall_time(
                s.positions[ball][axis],
                s.velocities[ball][axis],
                s.radius,
                s.arena_size,
            ) {
                consider(t, Event::Wall { ball, axis });
            }
        }
    }
    for i in 0..s.n_balls() {
        for j in i + 1..s.n_balls() {
            if let Some(t) = pair_time(s, i, j) {
                consider(t, Event::Pair { i, j });
            }
        }
    }
    best
}

fn advance(s: &mut BallState, dt: f64) {
    for (p, v) in s.positions.iter_mut().zip(&s.velocities) {
        p[0] += v[0] * dt;
        p[1] += v[1] * dt;
    }
}

/// Push overlapping pairs apart symmetrically along their center line and
/// pull balls back inside the walls.
fn separate(s: &mut BallState) {
    let r = s.radius;
    for i in 0..s.n_balls() {
        for j in i + 1..s.n_balls() {
            let (pi, pj) = (s.positions[i], s.positions[j]);
            let d = dist(pi, pj);
            let overlap = 2.0 * r - d;
            if overlap > 0.0 {
                let n = if d > 0.0 {
                    [(pi[0] - pj[0]) / d, (pi[1] - pj[1]) / d]
                } else {
                    [1.0, 0.0]
                };
                for k in 0..2 {
                    s.positions[i][k] += 0.5 * overlap * n[k];
                    s.positions[j][k] -= 0.5 * overlap * n[k];
                }
            }
        }
    }
    for p in &mut s.positions {
        for c in p.iter_mut() {
            *c = c.clamp(r, s.arena_size - r);
        }
    }
}

/// Advance the state by `dt` frames.
///
/// Collisions are resolved at their exact contact times: walls reflect the
/// normal velocity component, and a ball-ball contact exchanges the velocity
/// components along the center line (equal masses).
pub fn step_physics(state: &BallState, dt: f64) -> BallState {
    let mut s = state.clone();
    if s.max_penetration() > 0.0 {
        separate(&mut s);
    }
    let mut remaining = dt;
    for _ in 0..MAX_EVENTS_PER_STEP {
        let Some((t, event)) = next_event(&s, remaining) else {
            break;
        };
        advance(&mut s, t);
        remaining -= t;
        match event {
            Event::Wall { ball, axis } => {
                let low = s.positions[ball][axis] < s.arena_size / 2.0;
                let v = s.velocities[ball][axis].abs();
                s.velocities[ball][axis] = if low { v } else { -v };
            }
            Event::Pair { i, j } => {
                let (pi, pj) = (s.positions[i], s.positions[j]);
                let d = dist(pi, pj);
                let n = [(pi[0] - pj[0]) / d, (pi[1] - pj[1]) / d];
                let dv = [
                    s.velocities[i][0] - s.velocities[j][0],
                    s.velocities[i][1] - s.velocities[j][1],
                ];
                let u = dot(dv, n);
                for k in 0..2 {
                    s.velocities[i][k] -= u * n[k];
                    s.velocities[j][k] += u * n[k];
                }
            }
        }
    }
    advance(&mut s, remaining.max(0.0));
    s
}

/// Rasterize the balls as anti-aliased filled discs on a `size` x `size`
/// frame: intensity 1 inside, a linear one-pixel ramp at the rim, overlaps
/// clamped to 1.
pub fn render_balls(state: &BallState, size: usize) -> Vec<f32> {
    let mut frame = vec![0f64; size * size];
    let scale = size as f64 / state.arena_size;
    let r = state.radius * scale;
    for p in &state.positions {
        let (cx, cy) = (p[0] * scale, p[1] * scale);
        let lo_x = ((cx - r - 1.0).floor().max(0.0)) as usize;
        let hi_x = ((cx + r + 1.0).ceil().min(size as f64)) as usize;
        let lo_y = ((cy - r - 1.0).floor().max(0.0)) as usize;
        let hi_y = ((cy + r + 1.0).ceil().min(size as f64)) as usize;
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                frame[y * size + x] += (r + 0.5 - d).clamp(0.0, 1.0);
            }
        }
    }
    frame.into_iter().map(|v| v.min(1.0) as f32).collect()
}

fn sample_initial_state(config: &BallConfig, rng: &mut ChaCha8Rng) -> Result<BallState> {
    let r = config.radius;
    let lo = r;
    let hi = config.arena_size - r;
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(config.n_balls);
    let mut tries = 0;
    while positions.len() < config.n_balls {
        if tries >= config.max_tries {
            return Err(Error::Config(format!(
                "could not place {} balls of radius {r} without overlap after {} tries",
                config.n_balls, config.max_tries
            )));
        }
        tries += 1;
        let p = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        if positions.iter().all(|q| dist(p, *q) >= 2.0 * r) {
            positions.push(p);
        }
    }
    let velocities = (0..config.n_balls)
        .map(|_| {
            let speed = if config.max_speed > config.min_speed {
                rng.random_range(config.min_speed..=config.max_speed)
            } else {
                config.min_speed
            };
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            [speed * angle.cos(), speed * angle.sin()]
        })
        .collect();
    Ok(BallState::new(positions, velocities, r, config.arena_size))
}

/// Roll out one Bouncing Balls clip with `input_len + pred_len` frames.
pub fn simulate_bouncing_balls(config: &BallConfig, rng: &mut ChaCha8Rng) -> Result<BallTrajectory> {
    config.validate()?;
    let n_frames = config.input_len + config.pred_len;
    let mut state = sample_initial_state(config, rng)?;
    let dt = 1.0 / config.substeps as f64;
    let mut states = Vec::with_capacity(n_frames);
    let mut frames = Vec::with_capacity(n_frames * config.frame_size * config.frame_size);
    for t in 0..n_frames {
        if t > 0 {
            for _ in 0..config.substeps {
                state = step_physics(&state, dt);
            }
        }
        frames.extend(render_balls(&state, config.frame_size));
        states.push(state.clone());
    }
    let rendered = VideoSequence::new(frames, config.input_len, config.pred_len, config.frame_size)?;
    Ok(BallTrajectory { states, rendered })
}
