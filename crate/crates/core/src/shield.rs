//! Control barrier shield: barrier evaluation, affine constraints on the body
//! command, and the minimum-deviation projection.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::perception::PredictedObstacle;
use crate::state::{Command, CommandBox, RobotState, Vec2};
use crate::world::{PassabilityField, SafetyGeometry};

pub const SAFE_TOL: f64 = 1e-9;
const SOLVE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConstraintTag {
    Env,
    /// Dynamic obstacle by track id.
    Dyn(usize),
    Box,
}

/// Half-space `a . u >= b` over `(vx, vy, omega)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineConstraint {
    pub a: Vector3<f64>,
    pub b: f64,
    pub tag: ConstraintTag,
    /// Barrier value that produced the constraint; orders relaxation.
    pub h: f64,
}

impl AffineConstraint {
    pub fn new(a: Vector3<f64>, b: f64, tag: ConstraintTag) -> Self {
        Self {
            a,
            b,
            tag,
            h: f64::INFINITY,
        }
    }

    pub fn residual(&self, u: &Vector3<f64>) -> f64 {
        self.a.dot(u) - self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    pub constraints: Vec<AffineConstraint>,
    pub bounds: CommandBox,
}

impl SafeSet {
    pub fn new(constraints: Vec<AffineConstraint>, bounds: CommandBox) -> Self {
        Self { constraints, bounds }
    }

    fn box_constraints(&self) -> [AffineConstraint; 6] {
        let up = self.bounds.upper();
        let e = |k: usize, s: f64| {
            let mut a = Vector3::zeros();
            a[k] = s;
            AffineConstraint::new(a, -up[k], ConstraintTag::Box)
        };
        [e(0, 1.0), e(0, -1.0), e(1, 1.0), e(1, -1.0), e(2, 1.0), e(2, -1.0)]
    }

    /// Barrier constraints followed by the six box half-spaces.
    pub fn all_constraints(&self) -> Vec<AffineConstraint> {
        let mut v = self.constraints.clone();
        v.extend(self.box_constraints());
        v
    }
}

/// Barrier value with its position gradient and explicit time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    pub grad: Vec2,
    pub dh_dt: f64,
    /// Set when the centers coincide and the gradient is a fallback.
    pub singular: bool,
}

pub fn eval_h_env(robot: &RobotState, field: &PassabilityField) -> BarrierEval {
    let p = robot.position();
    let d = field.resolution;
    let ex = Vec2::new(d, 0.0);
    let ey = Vec2::new(0.0, d);
    let gx = (field.phi_env_at(p + ex) - field.phi_env_at(p - ex)) / (2.0 * d);
    let gy = (field.phi_env_at(p + ey) - field.phi_env_at(p - ey)) / (2.0 * d);
    BarrierEval {
        h: field.phi_env_at(p),
        grad: Vec2::new(gx, gy),
        dh_dt: 0.0,
        singular: false,
    }
}

pub fn eval_h_dyn(robot: &RobotState, pred: &PredictedObstacle, geom: &SafetyGeometry) -> BarrierEval {
    let rel = robot.position() - pred.position;
    let dist = rel.norm();
    let (grad, singular) = if dist >= 1e-6 {
        (rel / dist, false)
    } else if pred.velocity.norm() > 1e-9 {
        (-pred.velocity / pred.velocity.norm(), true)
    } else {
        (robot.to_world(Vec2::new(1.0, 0.0)), true)
    };
    BarrierEval {
        h: dist - geom.effective_radius(pred.radius),
        grad,
        dh_dt: -grad.dot(&pred.velocity),
        singular,
    }
}

/// `h_dot + alpha h >= 0` with `h_dot = grad . R(theta) v + dh/dt`.
pub fn cbf_constraint(robot: &RobotState, barrier: &BarrierEval, alpha: f64, tag: ConstraintTag) -> AffineConstraint {
    let (s, c) = robot.theta.sin_cos();
    let g = barrier.grad;
    let a = Vector3::new(g.x * c + g.y * s, -g.x * s + g.y * c, 0.0);
    AffineConstraint {
        a,
        b: -alpha * barrier.h - barrier.dh_dt,
        tag,
        h: barrier.h,
    }
}

pub fn cbf_constraints(robot: &RobotState, barriers: &[(ConstraintTag, BarrierEval)], alpha: f64) -> Vec<AffineConstraint> {
    barriers.iter().map(|(tag, b)| cbf_constraint(robot, b, alpha, *tag)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShieldStatus {
    Passthrough,
    Filtered,
    /// Some dynamic constraints were dropped to regain feasibility.
    Relaxed,
    /// No feasible command; the base is told to stop.
    Emergency,
    /// Shield bypassed by configuration.
    Disabled,
}

impl ShieldStatus {
    /// The full constraint set was honored.
    pub fn is_feasible(self) -> bool {
        matches!(self, ShieldStatus::Passthrough | ShieldStatus::Filtered)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShieldStatus::Passthrough => "passthrough",
            ShieldStatus::Filtered => "filtered",
            ShieldStatus::Relaxed => "relaxed",
            ShieldStatus::Emergency => "emergency",
            ShieldStatus::Disabled => "disabled",
        }
    }
}

pub fn is_safe(u: Command, set: &SafeSet) -> bool {
    let v = u.to_vector();
    set.bounds.contains(u, SAFE_TOL) && set.constraints.iter().all(|c| c.residual(&v) >= -SAFE_TOL)
}

/// Closest point to `u0` on the intersection of the hyperplanes of `active`,
/// with its multipliers, or `None` if the normals are dependent.
fn equality_projection(u0: &Vector3<f64>, active: &[&AffineConstraint]) -> Option<(Vector3<f64>, Vec<f64>)> {
    let k = active.len();
    let mut gram = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = active[i].a.dot(&active[j].a);
        }
        rhs[i] = active[i].b - active[i].a.dot(u0);
    }
    let sub = gram.view((0, 0), (k, k)).clone_owned();
    let scale = sub.diagonal().max();
    if !(scale > 0.0) || sub.determinant().abs() <= 1e-12 * scale.powi(k as i32) {
        return None;
    }
    let lambda = sub.lu().solve(&rhs.rows(0, k).clone_owned())?;
    let mut u = *u0;
    for i in 0..k {
        u += active[i].a * lambda[i];
    }
    Some((u, lambda.iter().copied().collect()))
}

/// Exact minimum-norm projection by enumerating active sets of size <= 3.
///
/// Every primal-feasible stationary point of an active set is a candidate;
/// the closest one is the optimum because the true minimizer is attained on
/// some linearly independent active set of at most three constraints.
pub fn solve_projection(u0: Vector3<f64>, constraints: &[AffineConstraint]) -> Option<Vector3<f64>> {
    let usable: Vec<&AffineConstraint> = constraints.iter().filter(|c| c.a.norm() > 1e-12).collect();
    // constraints with a vanishing normal are either vacuous or infeasible
    if constraints.iter().any(|c| c.a.norm() <= 1e-12 && c.b > SOLVE_TOL) {
        return None;
    }
    let feasible = |u: &Vector3<f64>| usable.iter().all(|c| c.residual(u) >= -SOLVE_TOL);
    if feasible(&u0) {
        return Some(u0);
    }
    let n = usable.len();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |active: &[&AffineConstraint]| {
        if let Some((u, lambda)) = equality_projection(&u0, active) {
            if lambda.iter().all(|&l| l >= -1e-12) && feasible(&u) {
                let d = (u - u0).norm_squared();
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, u));
                }
            }
        }
    };
    for i in 0..n {
        consider(&[usable[i]]);
        for j in i + 1..n {
            consider(&[usable[i], usable[j]]);
            for k in j + 1..n {
                consider(&[usable[i], usable[j], usable[k]]);
            }
        }
    }
    best.map(|(_, u)| u)
}

/// Safety filter: identity on safe commands, closest safe command
/// otherwise. Dynamic constraints are dropped one at a time, largest
/// barrier value first, when the set is empty; if that fails the command is
/// zero.
pub fn project_safe(u_fuse: Command, set: &SafeSet) -> (Command, ShieldStatus) {
    if is_safe(u_fuse, set) {
        return (u_fuse, ShieldStatus::Passthrough);
    }
    let u0 = u_fuse.to_vector();
    let all = set.all_constraints();
    if let Some(u) = solve_projection(u0, &all) {
        return (Command::from_vector(&u), ShieldStatus::Filtered);
    }
    let mut dyn_order: Vec<usize> = (0..set.constraints.len())
        .filter(|&i| matches!(set.constraints[i].tag, ConstraintTag::Dyn(_)))
        .collect();
    dyn_order.sort_by(|&i, &j| set.constraints[j].h.total_cmp(&set.constraints[i].h).then(i.cmp(&j)));
    let mut dropped = vec![false; set.constraints.len()];
    for i in dyn_order {
        dropped[i] = true;
        let mut kept: Vec<AffineConstraint> = set
            .constraints
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropped[*k])
            .map(|(_, c)| *c)
            .collect();
        kept.extend(set.box_constraints());
        if let Some(u) = solve_projection(u0, &kept) {
            return (Command::from_vector(&u), ShieldStatus::Relaxed);
        }
    }
    (Command::ZERO, ShieldStatus::Emergency)
}

/// Checks the KKT conditions of a claimed projection: feasibility,
/// complementary slackness, and `u - u0` in the cone of active normals.
pub fn kkt_holds(u0: Command, u: Command, set: &SafeSet, tol: f64) -> bool {
    let (u0, u) = (u0.to_vector(), u.to_vector());
    let all = set.all_constraints();
    if all.iter().any(|c| c.residual(&u) < -tol) {
        return false;
    }
    let active: Vec<&AffineConstraint> = all.iter().filter(|c| c.residual(&u) <= tol.max(1e-9)).collect();
    let d = u - u0;
    if d.norm() <= tol {
        return true;
    }
    // nonnegative least squares over <= 3 active normals by enumeration
    let n = active.len();
    let fits = |idx: &[usize]| {
        let a: Vec<&AffineConstraint> = idx.iter().map(|&i| active[i]).collect();
        let k = a.len();
        let mut gram = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] = a[i].a.dot(&a[j].a);
            }
            rhs[i] = a[i].a.dot(&d);
        }
        let sub = gram.view((0, 0), (k, k)).clone_owned();
        match sub.lu().solve(&rhs.rows(0, k).clone_owned()) {
            Some(l) if l.iter().all(|&x| x >= -tol) => {
                let mut r = d;
                for i in 0..k {
                    r -= a[i].a * l[i];
                }
                r.norm() <= tol.max(1e-7) * (1.0 + d.norm())
            }
            _ => false,
        }
    };
    for i in 0..n {
        if fits(&[i]) {
            return true;
        }
        for j in i + 1..n {
            if fits(&[i, j]) {
                return true;
            }
            for k in j + 1..n {
                if fits(&[i, j, k]) {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShieldConfig {
    pub enabled: bool,
    /// CBF class-K gain (1/s).
    pub alpha: f64,
    /// Constrain only the selected most imminent obstacle.
    pub i_star_only: bool,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 2.0,
            i_star_only: false,
        }
    }
}

/// One env constraint plus one dyn constraint per predicted obstacle (or
/// only `selected` when `i_star_only`).
pub fn build_safe_set(
    robot: &RobotState,
    field: &PassabilityField,
    predictions: &[PredictedObstacle],
    selected: Option<usize>,
    geom: &SafetyGeometry,
    bounds: CommandBox,
    cfg: &ShieldConfig,
) -> SafeSet {
    let mut constraints = vec![cbf_constraint(robot, &eval_h_env(robot, field), cfg.alpha, ConstraintTag::Env)];
    for (k, o) in predictions.iter().enumerate() {
        if cfg.i_star_only && selected != Some(k) {
            continue;
        }
        let b = eval_h_dyn(robot, o, geom);
        constraints.push(cbf_constraint(robot, &b, cfg.alpha, ConstraintTag::Dyn(o.id)));
    }
    SafeSet::new(constraints, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_passability_field, GridMap2p5D, TerrainLimits};
    use std::f64::consts::FRAC_PI_2;

    fn set(cs: Vec<AffineConstraint>) -> SafeSet {
        SafeSet::new(cs, CommandBox::default())
    }

    fn half(a: [f64; 3], b: f64) -> AffineConstraint {
        AffineConstraint::new(Vector3::from(a), b, ConstraintTag::Env)
    }

    fn obstacle(p: Vec2, v: Vec2, r: f64) -> PredictedObstacle {
        PredictedObstacle {
            id: 0,
            position: p,
            velocity: v,
            radius: r,
        }
    }

    #[test]
    fn h_dyn_examples() {
        // r_eff = 0.6: obstacle radius 0.15 with default 0.35 + 0.10
        let geom = SafetyGeometry::default();
        let robot = RobotState::at(0.0, 0.0, 0.0);
        let b = eval_h_dyn(&robot, &obstacle(Vec2::new(2.0, 0.0), Vec2::zeros(), 0.15), &geom);
        assert!((b.h - 1.4).abs() < 1e-12);
        assert_eq!(b.grad, Vec2::new(-1.0, 0.0));
        assert_eq!(b.dh_dt, 0.0);
        let closing = obstacle(Vec2::new(2.0, 0.0), Vec2::new(-3.0, 0.0), 0.15);
        let b = eval_h_dyn(&robot, &closing, &geom);
        assert!((b.dh_dt + 3.0).abs() < 1e-12);
        // finite difference of h over a short interval
        let dt = 1e-6;
        let later = obstacle(closing.position + closing.velocity * dt, closing.velocity, 0.15);
        let fd = (eval_h_dyn(&robot, &later, &geom).h - b.h) / dt;
        assert!((fd - b.dh_dt).abs() < 1e-6);
    }

    #[test]
    fn h_dyn_singular_fallback() {
        let geom = SafetyGeometry::default();
        let robot = RobotState::at(1.0, 1.0, 0.3);
        let b = eval_h_dyn(&robot, &obstacle(Vec2::new(1.0, 1.0), Vec2::new(0.0, 2.0), 0.15), &geom);
        assert!(b.singular);
        assert_eq!(b.grad, Vec2::new(0.0, -1.0));
        let b = eval_h_dyn(&robot, &obstacle(Vec2::new(1.0, 1.0), Vec2::zeros(), 0.15), &geom);
        assert!(b.singular && (b.grad - Vec2::new(0.3f64.cos(), 0.3f64.sin())).norm() < 1e-12);
    }

    #[test]
    fn h_env_examples() {
        let mut map = GridMap2p5D::free(Vec2::zeros(), 0.1, 301, 301).unwrap();
        map.block_rect(Vec2::new(0.0, 0.0), Vec2::new(1.0, 30.0));
        let field = build_passability_field(&map, &SafetyGeometry::default(), TerrainLimits::default());
        let near = RobotState::at(2.03, 15.0, 0.0);
        let b = eval_h_env(&near, &field);
        assert_eq!(b.h, field.phi_env_at(near.position()));
        assert!((b.grad - Vec2::new(1.0, 0.0)).norm() < 0.05);
        assert_eq!(b.dh_dt, 0.0);
    }

    #[test]
    fn h_env_plateau_gradient_vanishes() {
        let map = GridMap2p5D::free(Vec2::zeros(), 0.1, 21, 21).unwrap();
        let field = build_passability_field(&map, &SafetyGeometry::default(), TerrainLimits::default());
        let b = eval_h_env(&RobotState::at(1.0, 1.0, 0.0), &field);
        assert!(b.grad.norm() < 1e-9);
    }

    #[test]
    fn cbf_constraint_examples() {
        let bar = BarrierEval {
            h: 1.0,
            grad: Vec2::new(1.0, 0.0),
            dh_dt: 0.0,
            singular: false,
        };
        let c = cbf_constraint(&RobotState::at(0.0, 0.0, 0.0), &bar, 1.0, ConstraintTag::Env);
        assert_eq!(c.a, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(c.b, -1.0);
        let c = cbf_constraint(&RobotState::at(0.0, 0.0, FRAC_PI_2), &bar, 1.0, ConstraintTag::Env);
        assert!((c.a - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let bar = BarrierEval {
            h: 0.5,
            grad: Vec2::new(1.0, 0.0),
            dh_dt: -3.0,
            singular: false,
        };
        let c = cbf_constraint(&RobotState::at(0.0, 0.0, 0.0), &bar, 2.0, ConstraintTag::Dyn(0));
        assert!((c.b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cbf_boundary_command_keeps_discrete_decay() {
        // v_x = -1 on the constraint boundary of h = 1, alpha = 1: one Euler
        // step of h over dt gives h (1 - alpha dt)
        let dt: f64 = 0.01;
        let h0: f64 = 1.0;
        let h1 = h0 + (-1.0) * dt;
        assert!((h1 - h0 * (1.0 - dt)).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let s = set(vec![half([1.0, 0.0, 0.0], -0.5)]);
        let (u, st) = project_safe(Command::new(-1.0, 0.0, 0.0), &s);
        assert_eq!(st, ShieldStatus::Filtered);
        assert!((u.vx + 0.5).abs() < 1e-12 && u.vy == 0.0 && u.omega == 0.0);

        let s = set(vec![]);
        let (u, st) = project_safe(Command::new(2.0, 0.0, 0.0), &s);
        assert_eq!(st, ShieldStatus::Filtered);
        assert_eq!(u, Command::new(1.5, 0.0, 0.0));

        let inside = Command::new(0.3, -0.2, 0.1);
        let s = set(vec![half([1.0, 0.0, 0.0], -0.5)]);
        let (u, st) = project_safe(inside, &s);
        assert_eq!(st, ShieldStatus::Passthrough);
        assert_eq!(u.vx.to_bits(), inside.vx.to_bits());
    }

    #[test]
    fn is_safe_examples() {
        let s = set(vec![half([1.0, 0.0, 0.0], -0.5)]);
        assert!(is_safe(Command::new(0.0, 0.0, 0.0), &s));
        assert!(is_safe(Command::new(-0.5, 0.0, 0.0), &s));
        assert!(!is_safe(Command::new(-0.6, 0.0, 0.0), &s));
        assert!(!is_safe(Command::new(0.0, 1.2, 0.0), &s));
    }

    #[test]
    fn relaxation_drops_least_urgent_dyn_first() {
        // two contradictory dyn constraints on v_x; the larger h goes first
        let mut near = half([1.0, 0.0, 0.0], 1.0);
        near.tag = ConstraintTag::Dyn(1);
        near.h = 0.1;
        let mut far = half([-1.0, 0.0, 0.0], 1.0);
        far.tag = ConstraintTag::Dyn(2);
        far.h = 0.8;
        let (u, st) = project_safe(Command::ZERO, &set(vec![near, far]));
        assert_eq!(st, ShieldStatus::Relaxed);
        assert!((u.vx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn emergency_when_env_infeasible() {
        let (u, st) = project_safe(Command::new(0.5, 0.0, 0.0), &set(vec![half([1.0, 0.0, 0.0], 2.0)]));
        assert_eq!(st, ShieldStatus::Emergency);
        assert_eq!(u, Command::ZERO);
    }

    #[test]
    fn filtered_outputs_satisfy_kkt() {
        let s = set(vec![
            half([1.0, 1.0, 0.0], 0.5),
            half([0.0, -1.0, 0.3], 0.2),
            half([-1.0, 0.2, 0.0], -1.0),
        ]);
        for u0 in [
            Command::new(-1.0, -1.0, 0.0),
            Command::new(2.0, 2.0, 3.0),
            Command::new(0.0, 0.0, -2.5),
        ] {
            let (u, st) = project_safe(u0, &s);
            assert!(st.is_feasible());
            assert!(is_safe(u, &s));
            assert!(kkt_holds(u0, u, &s, 1e-9));
        }
    }

    #[test]
    fn build_safe_set_counts() {
        let map = GridMap2p5D::free(Vec2::zeros(), 0.1, 21, 21).unwrap();
        let geom = SafetyGeometry::default();
        let field = build_passability_field(&map, &geom, TerrainLimits::default());
        let robot = RobotState::at(1.0, 1.0, 0.0);
        let preds = vec![
            obstacle(Vec2::new(3.0, 1.0), Vec2::zeros(), 0.15),
            obstacle(Vec2::new(1.0, 4.0), Vec2::zeros(), 0.15),
        ];
        let all = build_safe_set(&robot, &field, &preds, Some(1), &geom, CommandBox::default(), &ShieldConfig::default());
        assert_eq!(all.constraints.len(), 3);
        let one_cfg = ShieldConfig {
            i_star_only: true,
            ..Default::default()
        };
        let one = build_safe_set(&robot, &field, &preds, Some(1), &geom, CommandBox::default(), &one_cfg);
        assert_eq!(one.constraints.len(), 2);
    }
}
