//! Robot state and body-frame velocity commands shared across the stack.

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec2 = Vector2<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Body-frame velocity command `(v_x, v_y, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Command {
    pub const ZERO: Command = Command {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.omega)
    }

    pub fn linear(self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn is_finite(self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.vx * k, self.vy * k, self.omega * k)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.vx + o.vx, self.vy + o.vy, self.omega + o.omega)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.vx - o.vx, self.vy - o.vy, self.omega - o.omega)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn norm_inf(self) -> f64 {
        self.vx.abs().max(self.vy.abs()).max(self.omega.abs())
    }
}

/// Actuation box `U`: symmetric per-axis bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandBox {
    pub vx_max: f64,
    pub vy_max: f64,
    pub omega_max: f64,
}

impl Default for CommandBox {
    fn default() -> Self {
        Self {
            vx_max: 1.5,
            vy_max: 1.0,
            omega_max: 2.0,
        }
    }
}

impl CommandBox {
    pub fn clamp(&self, u: Command) -> Command {
        Command::new(
            u.vx.clamp(-self.vx_max, self.vx_max),
            u.vy.clamp(-self.vy_max, self.vy_max),
            u.omega.clamp(-self.omega_max, self.omega_max),
        )
    }

    pub fn contains(&self, u: Command, tol: f64) -> bool {
        u.vx.abs() <= self.vx_max + tol
            && u.vy.abs() <= self.vy_max + tol
            && u.omega.abs() <= self.omega_max + tol
    }

    pub fn upper(&self) -> Vector3<f64> {
        Vector3::new(self.vx_max, self.vy_max, self.omega_max)
    }
}

/// Planar base state with realized body velocity and a roll/pitch proxy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
    /// Realized body velocity.
    pub velocity: Command,
    /// `(roll, pitch)` in radians.
    pub tilt: Vec2,
}

impl RobotState {
    pub fn at(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            ..Default::default()
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.theta)
    }

    /// Body-frame vector expressed in world frame.
    pub fn to_world(&self, body: Vec2) -> Vec2 {
        self.rotation() * body
    }

    /// World-frame vector expressed in body frame.
    pub fn to_body(&self, world: Vec2) -> Vec2 {
        self.rotation().inverse() * world
    }

    /// Realized planar velocity in world frame.
    pub fn world_velocity(&self) -> Vec2 {
        self.to_world(self.velocity.linear())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.theta.is_finite()
            && self.velocity.is_finite()
            && self.tilt.iter().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-9);
        assert!((wrap_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-9);
        for k in -20..20 {
            let a = wrap_angle(0.37 * k as f64);
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn box_clamp() {
        let b = CommandBox::default();
        assert_eq!(b.clamp(Command::new(3.0, 0.0, 0.0)), Command::new(1.5, 0.0, 0.0));
        assert_eq!(b.clamp(Command::new(-3.0, -2.0, 9.0)), Command::new(-1.5, -1.0, 2.0));
    }

    #[test]
    fn frame_round_trip() {
        let s = RobotState::at(1.0, 2.0, 0.7);
        let v = Vec2::new(0.3, -1.2);
        assert!((s.to_body(s.to_world(v)) - v).norm() < 1e-12);
        let q = RobotState::at(0.0, 0.0, PI / 2.0);
        assert!((q.to_world(Vec2::new(1.0, 0.0)) - Vec2::new(0.0, 1.0)).norm() < 1e-12);
    }
}
