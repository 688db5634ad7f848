//! Kinematic base, ballistic obstacles, domain randomization and command
//! latency.

pub mod episode;
pub mod scenario;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::seeding::SeededStream;
use crate::state::{wrap_angle, Command, CommandBox, RobotState, Vec2};
use crate::world::{ObstacleDisk, SafetyGeometry};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("time constant and step must be positive")]
    BadTiming,
    #[error("obstacle spawn rejected {0} times")]
    SpawnRejected(usize),
    #[error("invalid randomization range `{0}`")]
    BadRange(&'static str),
}

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(half: f64) -> Self {
        Self { lo: -half, hi: half }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Standard deviation of the uniform distribution over the range.
    pub fn uniform_std(&self) -> f64 {
        self.width() / 12f64.sqrt()
    }

    pub fn sample(&self, rng: &mut SeededStream) -> f64 {
        rng.uniform(self.lo, self.hi).unwrap_or(self.lo)
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Episode-level randomization, all uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationProfile {
    pub base_position_noise: Range,
    /// Radians.
    pub base_yaw_noise: Range,
    pub base_linear_velocity_noise: Range,
    pub base_angular_velocity_noise: Range,
    pub obstacle_initial_position: Range,
    pub obstacle_speed: Range,
    pub obstacle_position_noise: Range,
    pub obstacle_velocity_noise: Range,
    pub dropout_probability: f64,
    pub dropout_hold_min: u32,
    pub dropout_hold_max: u32,
    pub friction_factor: Range,
    pub latency: Range,
}

impl Default for RandomizationProfile {
    fn default() -> Self {
        Self {
            base_position_noise: Range::symmetric(0.03),
            base_yaw_noise: Range::symmetric(2f64.to_radians()),
            base_linear_velocity_noise: Range::symmetric(0.10),
            base_angular_velocity_noise: Range::symmetric(0.15),
            obstacle_initial_position: Range::symmetric(3.0),
            obstacle_speed: Range::new(0.5, 4.0),
            obstacle_position_noise: Range::symmetric(0.05),
            obstacle_velocity_noise: Range::symmetric(0.20),
            dropout_probability: 0.05,
            dropout_hold_min: 1,
            dropout_hold_max: 3,
            friction_factor: Range::new(0.6, 1.2),
            latency: Range::new(0.0, 0.06),
        }
    }
}

impl RandomizationProfile {
    /// Noise-free sensing, nominal friction, no latency. Obstacle spawn
    /// ranges keep their defaults.
    pub fn exact() -> Self {
        Self {
            base_position_noise: Range::fixed(0.0),
            base_yaw_noise: Range::fixed(0.0),
            base_linear_velocity_noise: Range::fixed(0.0),
            base_angular_velocity_noise: Range::fixed(0.0),
            obstacle_position_noise: Range::fixed(0.0),
            obstacle_velocity_noise: Range::fixed(0.0),
            dropout_probability: 0.0,
            friction_factor: Range::fixed(1.0),
            latency: Range::fixed(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ranges = [
            ("base_position_noise", self.base_position_noise),
            ("base_yaw_noise", self.base_yaw_noise),
            ("base_linear_velocity_noise", self.base_linear_velocity_noise),
            ("base_angular_velocity_noise", self.base_angular_velocity_noise),
            ("obstacle_initial_position", self.obstacle_initial_position),
            ("obstacle_speed", self.obstacle_speed),
            ("obstacle_position_noise", self.obstacle_position_noise),
            ("obstacle_velocity_noise", self.obstacle_velocity_noise),
            ("friction_factor", self.friction_factor),
            ("latency", self.latency),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(SimError::BadRange(name));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout_probability) {
            return Err(SimError::BadRange("dropout_probability"));
        }
        if self.dropout_hold_min > self.dropout_hold_max {
            return Err(SimError::BadRange("dropout_hold"));
        }
        if self.friction_factor.lo <= 0.0 {
            return Err(SimError::BadRange("friction_factor"));
        }
        if self.latency.lo < 0.0 {
            return Err(SimError::BadRange("latency"));
        }
        Ok(())
    }
}

/// Constants of the planar base model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseModel {
    /// Velocity tracking lag at unit friction (s).
    pub tau: f64,
    pub tilt_tau: f64,
    pub tilt_terrain_gain: f64,
    pub tilt_accel_gain: f64,
    /// Fixed unit vector mixing roughness into (roll, pitch).
    pub tilt_mix: [f64; 2],
    pub effort_velocity_weight: f64,
    pub effort_accel_weight: f64,
    pub fall_threshold: f64,
    pub command_box: CommandBox,
}

impl Default for BaseModel {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            tau: 0.10,
            tilt_tau: 0.15,
            tilt_terrain_gain: 0.3,
            tilt_accel_gain: 0.2,
            tilt_mix: [s, s],
            effort_velocity_weight: 0.5,
            effort_accel_weight: 0.05,
            fall_threshold: 0.6,
            command_box: CommandBox::default(),
        }
    }
}

impl BaseModel {
    /// Mechanical effort proxy `c_v |v_b|^2 + c_a |(u - v_b) / tau|^2`.
    pub fn effort(&self, realized: Command, command: Command) -> f64 {
        let u = self.command_box.clamp(command);
        let accel = u.sub(realized).scale(1.0 / self.tau);
        self.effort_velocity_weight * realized.norm().powi(2)
            + self.effort_accel_weight * accel.norm().powi(2)
    }

    pub fn fallen(&self, s: &RobotState) -> bool {
        s.tilt.x.abs() > self.fall_threshold || s.tilt.y.abs() > self.fall_threshold
    }
}

/// Advances the base one control step.
///
/// The realized body velocity follows the clamped command with a first-order
/// lag whose time constant grows as friction drops. The pose is integrated
/// with the updated velocity in the heading held at the start of the step.
pub fn step_robot(
    s: &RobotState,
    command: Command,
    dt: f64,
    model: &BaseModel,
    friction: f64,
    roughness: f64,
) -> Result<RobotState, SimError> {
    if !s.is_finite() || !command.is_finite() || !friction.is_finite() || !roughness.is_finite() {
        return Err(SimError::NonFinite("step_robot"));
    }
    if !(dt > 0.0) || !(model.tau > 0.0) || !(friction > 0.0) {
        return Err(SimError::BadTiming);
    }
    let target = model.command_box.clamp(command);
    let tau_eff = model.tau / friction;
    let gain = (dt / tau_eff).min(1.0);
    let dv = target.sub(s.velocity);

    let mix = Vec2::new(model.tilt_mix[0], model.tilt_mix[1]);
    // roll responds to lateral, pitch to longitudinal velocity error
    let tilt_target =
        mix * (model.tilt_terrain_gain * roughness) + Vec2::new(dv.vy, dv.vx) * model.tilt_accel_gain;
    let tilt_gain = (dt / model.tilt_tau).min(1.0);
    let tilt = s.tilt + (tilt_target - s.tilt) * tilt_gain;

    let velocity = s.velocity.add(dv.scale(gain));
    let theta = wrap_angle(s.theta);
    let (sin, cos) = theta.sin_cos();
    let dx = (cos * velocity.vx - sin * velocity.vy) * dt;
    let dy = (sin * velocity.vx + cos * velocity.vy) * dt;

    Ok(RobotState {
        x: s.x + dx,
        y: s.y + dy,
        theta: wrap_angle(theta + velocity.omega * dt),
        velocity,
        tilt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Random heading, constant velocity.
    ConstantVelocity,
    /// Velocity fixed at spawn toward the robot's position at spawn time.
    Aimed,
}

/// Constant-velocity propagation. The attack mode only affects how the
/// velocity was chosen at spawn.
pub fn step_obstacle(o: &ObstacleDisk, dt: f64, _mode: AttackMode) -> ObstacleDisk {
    ObstacleDisk {
        position: o.position + o.velocity * dt,
        ..*o
    }
}

pub const MAX_SPAWN_TRIES: usize = 100;

/// Spawns an attacking obstacle around the robot.
///
/// The offset is uniform per axis over `profile.obstacle_initial_position`;
/// offsets closer than `min_distance` (and never closer than contact) are
/// resampled.
pub fn spawn_attack(
    rng: &mut SeededStream,
    profile: &RandomizationProfile,
    robot: &RobotState,
    geom: &SafetyGeometry,
    radii: &[f64],
    mode: AttackMode,
    min_distance: f64,
) -> Result<ObstacleDisk, SimError> {
    let radius = match radii.len() {
        0 => 0.15,
        1 => radii[0],
        n => radii[rng.index(n)],
    };
    let min_d = min_distance.max(geom.contact_radius(radius));
    for _ in 0..MAX_SPAWN_TRIES {
        let offset = Vec2::new(
            profile.obstacle_initial_position.sample(rng),
            profile.obstacle_initial_position.sample(rng),
        );
        if offset.norm() <= min_d {
            continue;
        }
        let speed = profile.obstacle_speed.sample(rng);
        let dir = match mode {
            AttackMode::Aimed => -offset / offset.norm(),
            AttackMode::ConstantVelocity => {
                let a = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI).unwrap_or(0.0);
                Vec2::new(a.cos(), a.sin())
            }
        };
        return Ok(ObstacleDisk {
            position: robot.position() + offset,
            velocity: dir * speed,
            radius,
        });
    }
    Err(SimError::SpawnRejected(MAX_SPAWN_TRIES))
}

/// FIFO command delay of a whole number of control steps.
#[derive(Debug, Clone)]
pub struct LatencyBuffer {
    queue: VecDeque<Command>,
}

impl LatencyBuffer {
    pub fn new(latency: f64, dt: f64) -> Self {
        let steps = (latency / dt).round().max(0.0) as usize;
        Self {
            queue: std::iter::repeat(Command::ZERO).take(steps).collect(),
        }
    }

    pub fn delay_steps(&self) -> usize {
        self.queue.len()
    }

    /// Pushes the newest command and returns the one due for execution.
    pub fn push(&mut self, u: Command) -> Command {
        self.queue.push_back(u);
        self.queue.pop_front().unwrap_or(u)
    }
}
