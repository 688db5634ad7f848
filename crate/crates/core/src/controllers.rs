//! Analytic navigation and reflex command laws, plus the per-step reward
//! evaluators used to score logged transitions.

use serde::{Deserialize, Serialize};

use crate::perception::PredictedObstacle;
use crate::planner::{contact_estimate, Goal, ReferencePath};
use crate::sim::BaseModel;
use crate::state::{wrap_angle, Command, RobotState, Vec2};
use crate::world::{hinge, phi_dyn, PassabilityField, SafetyGeometry};

/// Closest point of a path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    /// Arc coordinate of the projected point.
    pub s: f64,
    /// Signed distance, positive to the left of the tangent.
    pub lateral: f64,
    /// Path tangent at the projection.
    pub tangent: f64,
    pub point: Vec2,
}

impl PathProjection {
    /// Robot heading minus the local tangent, wrapped to `(-pi, pi]`.
    pub fn heading_error(&self, theta: f64) -> f64 {
        wrap_angle(theta - self.tangent)
    }
}

/// Exact point-to-segment projection over every segment. On equal distance
/// the smaller arc coordinate wins.
pub fn project_onto_path(path: &ReferencePath, p: Vec2) -> PathProjection {
    let pts = &path.points;
    if pts.len() == 1 {
        let d = p - pts[0];
        return PathProjection {
            s: 0.0,
            lateral: d.norm(),
            tangent: path.headings[0],
            point: pts[0],
        };
    }
    let mut best: Option<(f64, PathProjection)> = None;
    for k in 0..pts.len() - 1 {
        let (a, b) = (pts[k], pts[k + 1]);
        let seg = b - a;
        let len2 = seg.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(&seg) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = a + seg * t;
        let d2 = (p - q).norm_squared();
        if best.as_ref().map_or(true, |(bd, _)| d2 < *bd) {
            let tangent = seg.y.atan2(seg.x);
            let cross = seg.x * (p - q).y - seg.y * (p - q).x;
            let dist = d2.sqrt();
            best = Some((
                d2,
                PathProjection {
                    s: path.s[k] + t * (path.s[k + 1] - path.s[k]),
                    lateral: if cross >= 0.0 { dist } else { -dist },
                    tangent,
                    point: q,
                },
            ));
        }
    }
    best.expect("path has segments").1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub lookahead: f64,
    pub cruise_speed: f64,
    pub heading_gain: f64,
    /// Margin below which the cruise speed is scaled down linearly.
    pub slowdown_margin: f64,
    /// Lower bound on the margin slowdown factor.
    pub min_speed_factor: f64,
    /// Speed divisor `1 + roughness_gain * roughness`.
    pub roughness_gain: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.5,
            cruise_speed: 1.0,
            heading_gain: 2.0,
            slowdown_margin: 0.5,
            min_speed_factor: 0.2,
            roughness_gain: 1.0,
        }
    }
}

/// Local terrain sampled at the robot position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavContext {
    pub phi_env: f64,
    pub roughness: f64,
}

impl NavContext {
    pub fn open() -> Self {
        Self {
            phi_env: f64::INFINITY,
            roughness: 0.0,
        }
    }
}

/// Lookahead tracking command toward the reference path.
pub fn nav_command(robot: &RobotState, path: &ReferencePath, goal: &Goal, ctx: NavContext, cfg: &NavConfig) -> Command {
    let p = robot.position();
    if goal.contains(p) {
        return Command::ZERO;
    }
    let proj = project_onto_path(path, p);
    let s_target = (proj.s + cfg.lookahead).min(path.length());
    let mut target = path.point_at(s_target);
    if (target - p).norm() < 1e-9 {
        target = goal.center;
    }
    let to_target = target - p;
    let dist = to_target.norm();
    if dist < 1e-12 {
        return Command::ZERO;
    }
    let margin_factor = (ctx.phi_env / cfg.slowdown_margin).clamp(cfg.min_speed_factor, 1.0);
    let terrain_factor = 1.0 / (1.0 + cfg.roughness_gain * ctx.roughness.max(0.0));
    let speed = cfg.cruise_speed * margin_factor * terrain_factor;
    let body = robot.to_body(to_target / dist) * speed;
    let heading_err = wrap_angle(to_target.y.atan2(to_target.x) - robot.theta);
    Command::new(body.x, body.y, cfg.heading_gain * heading_err)
}

/// Obstacle with the smallest time to contact; ties go to the lower index.
pub fn select_threat(robot: &RobotState, predictions: &[PredictedObstacle], geom: &SafetyGeometry) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (k, o) in predictions.iter().enumerate() {
        let tc = contact_estimate(robot, o, geom).time_to_contact;
        if best.map_or(true, |(b, _)| tc < b) {
            best = Some((tc, k));
        }
    }
    best.map(|(_, k)| k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflexConfig {
    pub max_speed: f64,
    pub horizon: f64,
    /// Lower clamp of the away/perpendicular blend.
    pub min_away_blend: f64,
    /// Urgency at which the command reaches full magnitude.
    pub full_magnitude_urgency: f64,
    /// Probe distance for comparing the two sidestep directions.
    pub side_probe: f64,
}

impl Default for ReflexConfig {
    fn default() -> Self {
        Self {
            max_speed: 1.5,
            horizon: 1.0,
            min_away_blend: 0.3,
            full_magnitude_urgency: 0.5,
            side_probe: 0.5,
        }
    }
}

/// Evasive body-frame command against one predicted obstacle.
///
/// Direction blends the unit vector away from the obstacle with the
/// sidestep whose probe point has the larger environment margin (positive
/// body y on a tie). Urgency `1 - tau_c / tau_h` sets the blend and the
/// magnitude, which falls to zero at the horizon.
pub fn reflex_command(
    robot: &RobotState,
    threat: &PredictedObstacle,
    field: &PassabilityField,
    geom: &SafetyGeometry,
    cfg: &ReflexConfig,
) -> Command {
    let c = contact_estimate(robot, threat, geom);
    let urgency = 1.0 - c.time_to_contact / cfg.horizon;
    if urgency <= 0.0 {
        return Command::ZERO;
    }
    let p = robot.position();
    let rel = p - threat.position;
    let away_world = if rel.norm() >= 1e-6 {
        rel / rel.norm()
    } else if threat.velocity.norm() > 1e-9 {
        -threat.velocity / threat.velocity.norm()
    } else {
        robot.to_world(Vec2::new(0.0, 1.0))
    };
    let away = robot.to_body(away_world);
    let side_a = Vec2::new(-away.y, away.x);
    let side_b = -side_a;
    let probe = |t: Vec2| field.phi_env_at(p + robot.to_world(t) * cfg.side_probe);
    let (ma, mb) = (probe(side_a), probe(side_b));
    let side = if (ma - mb).abs() <= 1e-9 {
        if side_a.y > side_b.y || (side_a.y == side_b.y && side_a.x >= side_b.x) {
            side_a
        } else {
            side_b
        }
    } else if ma > mb {
        side_a
    } else {
        side_b
    };
    let beta = urgency.clamp(cfg.min_away_blend, 1.0);
    let magnitude = cfg.max_speed * (urgency / cfg.full_magnitude_urgency).clamp(0.0, 1.0);
    let dir = away * beta + side * (1.0 - beta);
    Command::new(dir.x * magnitude, dir.y * magnitude, 0.0)
}

/// Shaping coefficients for the navigation and reflex rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardGains {
    pub alpha_p: f64,
    pub alpha_psi: f64,
    pub alpha_rp: f64,
    pub alpha_omega: f64,
    pub alpha_e: f64,
    pub alpha_phi: f64,
    pub alpha_v: f64,
    pub alpha_rp_reg: f64,
    pub alpha_omega_reg: f64,
    pub alpha_ene: f64,
    pub alpha_h: f64,
    pub alpha_rp_rec: f64,
    pub nominal_height: f64,
    /// Height proxy coupling `h = h_nom + k * |tilt|`.
    pub height_tilt_coupling: f64,
}

impl Default for RewardGains {
    fn default() -> Self {
        Self {
            alpha_p: 1.0,
            alpha_psi: 1.0,
            alpha_rp: 1.0,
            alpha_omega: 1.0,
            alpha_e: 0.1,
            alpha_phi: 1.0,
            alpha_v: 0.25,
            alpha_rp_reg: 1.0,
            alpha_omega_reg: 1.0,
            alpha_ene: 0.1,
            alpha_h: 1.0,
            alpha_rp_rec: 1.0,
            nominal_height: 0.30,
            height_tilt_coupling: 0.2,
        }
    }
}

/// Named reward components and their sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub components: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_components(components: Vec<(&'static str, f64)>) -> Self {
        let total = components.iter().map(|(_, v)| v).sum();
        Self { components, total }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// One logged step: state before, state after, the command that drove it.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub before: &'a RobotState,
    pub after: &'a RobotState,
    pub command: Command,
    pub dt: f64,
}

pub fn nav_reward(t: &Transition<'_>, path: &ReferencePath, gains: &RewardGains, model: &BaseModel) -> RewardBreakdown {
    let before = project_onto_path(path, t.before.position());
    let after = project_onto_path(path, t.after.position());
    let progress = after.s - before.s;
    let dpsi = after.heading_error(t.after.theta);
    let track = (-gains.alpha_p * after.lateral.powi(2) - gains.alpha_psi * dpsi.powi(2)).exp();
    let yaw_rate = t.after.velocity.omega;
    let stable = (-gains.alpha_rp * t.after.tilt.norm_squared() - gains.alpha_omega * yaw_rate.powi(2)).exp();
    let effort = (-gains.alpha_e * model.effort(t.before.velocity, t.command)).exp();
    RewardBreakdown::from_components(vec![
        ("prog", progress),
        ("track", track),
        ("stable", stable),
        ("effort", effort),
    ])
}

pub fn reflex_reward(
    t: &Transition<'_>,
    threat: Option<&PredictedObstacle>,
    gains: &RewardGains,
    geom: &SafetyGeometry,
    model: &BaseModel,
) -> RewardBreakdown {
    let safe = match threat {
        Some(o) => {
            let clearance = phi_dyn(t.after.position(), &o.disk(), geom);
            let v_app = contact_estimate(t.after, o, geom).approach_speed;
            (gains.alpha_phi * clearance).tanh() - gains.alpha_v * hinge(v_app).powi(2)
        }
        None => 1.0,
    };
    let tilt2 = t.after.tilt.norm_squared();
    let yaw_rate = t.after.velocity.omega;
    let reg = 1.0 / (1.0 + gains.alpha_rp_reg * tilt2 + gains.alpha_omega_reg * yaw_rate.powi(2));
    let ene = (-gains.alpha_ene * model.effort(t.before.velocity, t.command)).exp();
    let height = gains.nominal_height + gains.height_tilt_coupling * tilt2.sqrt();
    let rec = (-gains.alpha_h * (height - gains.nominal_height).powi(2) - gains.alpha_rp_rec * tilt2).exp();
    RewardBreakdown::from_components(vec![("safe", safe), ("reg", reg), ("ene", ene), ("rec", rec)])
}
