//! Multi-rate spatial-temporal planner.
//!
//! The slow loop regenerates a reference path from lateral-offset motion
//! primitives around the static shortest path; the fast loop refreshes the
//! one-step obstacle predictions and the threat score every control step.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::perception::{hold_latest, predict_one_step, ObstacleTrack, PredictedObstacle};
use crate::state::{wrap_angle, RobotState, Vec2};
use crate::world::{hinge, phi_dyn, PassabilityField, SafetyGeometry};

/// Maximum spacing between consecutive waypoints.
pub const DS_MAX: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("goal cell is outside the map or not traversable")]
    GoalBlocked,
    #[error("goal unreachable from the robot cell on the static grid")]
    Unreachable,
    #[error("candidate set is empty")]
    EmptyCandidateSet,
}

/// Goal region: disk around `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: Vec2,
    pub radius: f64,
}

impl Goal {
    pub fn contains(&self, p: Vec2) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Arc-length parametrized polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub points: Vec<Vec2>,
    /// Cumulative arc length, strictly increasing.
    pub s: Vec<f64>,
    /// Tangent heading per waypoint.
    pub headings: Vec<f64>,
}

impl ReferencePath {
    /// Resamples a polyline so that consecutive waypoints are at most
    /// `ds_max` apart. Zero-length segments are dropped.
    pub fn from_polyline(poly: &[Vec2], ds_max: f64) -> Self {
        let mut points: Vec<Vec2> = Vec::with_capacity(poly.len() * 2);
        for (k, &p) in poly.iter().enumerate() {
            if k == 0 {
                points.push(p);
                continue;
            }
            let a = *points.last().expect("nonempty");
            let seg = p - a;
            let len = seg.norm();
            if len <= 1e-12 {
                continue;
            }
            let n = (len / ds_max).ceil().max(1.0) as usize;
            for m in 1..=n {
                points.push(a + seg * (m as f64 / n as f64));
            }
        }
        let mut s = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (k, p) in points.iter().enumerate() {
            if k > 0 {
                acc += (p - points[k - 1]).norm();
            }
            s.push(acc);
        }
        let headings = (0..points.len())
            .map(|k| {
                let d = if points.len() < 2 {
                    Vec2::new(1.0, 0.0)
                } else if k + 1 < points.len() {
                    points[k + 1] - points[k]
                } else {
                    points[k] - points[k - 1]
                };
                d.y.atan2(d.x)
            })
            .collect();
        Self { points, s, headings }
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("nonempty path")
    }

    /// Point at arc coordinate `s`, clipped to the path.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 || s <= 0.0 {
            return self.points[0];
        }
        if s >= self.length() {
            return self.end();
        }
        let k = self.s.partition_point(|v| *v <= s).clamp(1, n - 1);
        let (s0, s1) = (self.s[k - 1], self.s[k]);
        let t = (s - s0) / (s1 - s0);
        self.points[k - 1] + (self.points[k] - self.points[k - 1]) * t
    }

    /// Sum of absolute heading changes between consecutive segments.
    pub fn total_turning(&self) -> f64 {
        if self.points.len() < 3 {
            return 0.0;
        }
        self.headings[..self.headings.len() - 1]
            .windows(2)
            .map(|w| wrap_angle(w[1] - w[0]).abs())
            .sum()
    }
}

/// Single-source shortest distances from the goal cell over traversable
/// cells (`phi_env > 0`), 8-connected, no corner cutting.
#[derive(Debug, Clone)]
pub struct CostToGo {
    pub width: usize,
    pub height: usize,
    pub goal_cell: (usize, usize),
    pub goal: Goal,
    /// Shortest path length to the goal cell center; infinite if unreachable.
    pub dist: Vec<f64>,
    next: Vec<u32>,
}

const NO_NEXT: u32 = u32::MAX;

impl CostToGo {
    pub fn compute(field: &PassabilityField, goal: Goal) -> Result<Self, PlanError> {
        let (w, h) = (field.width, field.height);
        let goal_cell = field.cell_of(goal.center).ok_or(PlanError::GoalBlocked)?;
        let free = |i: usize, j: usize| field.phi_env[j * w + i] > 0.0;
        if !free(goal_cell.0, goal_cell.1) {
            return Err(PlanError::GoalBlocked);
        }
        let res = field.resolution;
        let mut dist = vec![f64::INFINITY; w * h];
        let mut next = vec![NO_NEXT; w * h];
        let mut heap = BinaryHeap::new();
        let g = goal_cell.1 * w + goal_cell.0;
        dist[g] = 0.0;
        // non-negative f64 bit patterns order like the values
        heap.push(Reverse((0f64.to_bits(), g)));
        while let Some(Reverse((bits, k))) = heap.pop() {
            let d = f64::from_bits(bits);
            if d > dist[k] {
                continue;
            }
            let (i, j) = ((k % w) as i64, (k / w) as i64);
            for (di, dj) in NEIGHBORS {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if !free(ni, nj) {
                    continue;
                }
                let diagonal = di != 0 && dj != 0;
                if diagonal && !(free(ni, j as usize) && free(i as usize, nj)) {
                    continue;
                }
                let step = if diagonal { res * std::f64::consts::SQRT_2 } else { res };
                let nk = nj * w + ni;
                let nd = d + step;
                if nd < dist[nk] {
                    dist[nk] = nd;
                    next[nk] = k as u32;
                    heap.push(Reverse((nd.to_bits(), nk)));
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            goal_cell,
            goal,
            dist,
            next,
        })
    }

    /// Reachable cell used as the path source for a robot at `p`: its own
    /// cell if reachable, else the reachable cell within 0.5 m minimizing
    /// offset plus cost-to-go.
    fn entry_cell(&self, field: &PassabilityField, p: Vec2) -> Option<usize> {
        let (ci, cj) = field.cell_of(p).unwrap_or_else(|| {
            let f = (p - field.origin) / field.resolution;
            (
                f.x.round().clamp(0.0, (self.width - 1) as f64) as usize,
                f.y.round().clamp(0.0, (self.height - 1) as f64) as usize,
            )
        });
        let k = cj * self.width + ci;
        if self.dist[k].is_finite() {
            return Some(k);
        }
        let r = (0.5 / field.resolution).ceil() as i64;
        let mut best: Option<(f64, usize)> = None;
        for dj in -r..=r {
            for di in -r..=r {
                let (ni, nj) = (ci as i64 + di, cj as i64 + dj);
                if ni < 0 || nj < 0 || ni >= self.width as i64 || nj >= self.height as i64 {
                    continue;
                }
                let nk = nj as usize * self.width + ni as usize;
                if !self.dist[nk].is_finite() {
                    continue;
                }
                let c = (field.cell_center(ni as usize, nj as usize) - p).norm() + self.dist[nk];
                if best.map_or(true, |(b, _)| c < b) {
                    best = Some((c, nk));
                }
            }
        }
        best.map(|(_, k)| k)
    }

    /// Shortest static polyline from `p` to the goal cell center: the robot
    /// position followed by the successor cell centers.
    pub fn shortest_polyline(&self, field: &PassabilityField, p: Vec2) -> Result<Vec<Vec2>, PlanError> {
        let mut k = self.entry_cell(field, p).ok_or(PlanError::Unreachable)?;
        let center = |k: usize| field.cell_center(k % self.width, k / self.width);
        let mut poly = vec![p];
        if self.next[k] == NO_NEXT {
            poly.push(center(k));
        }
        while self.next[k] != NO_NEXT {
            k = self.next[k] as usize;
            poly.push(center(k));
        }
        Ok(poly)
    }

    /// Length of the static shortest path from `p`. Shared by candidate
    /// generation and path-efficiency evaluation.
    pub fn static_path_length(&self, field: &PassabilityField, p: Vec2) -> Result<f64, PlanError> {
        let poly = self.shortest_polyline(field, p)?;
        Ok(ReferencePath::from_polyline(&poly, DS_MAX).length())
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Maximum number of candidates including the static optimum.
    pub max_candidates: usize,
    /// Positive lateral offsets; each is used with both signs.
    pub lateral_offsets: [f64; 3],
    /// Distance over which an offset is blended in (and out near the goal).
    pub offset_ramp: f64,
    pub replan_period_steps: u64,
    /// Prefix of each candidate checked against predicted obstacles.
    pub dynamic_lookahead: f64,
    pub margin_weight: f64,
    pub margin_scale: f64,
    pub curvature_weight: f64,
    /// Time-to-contact horizon of the threat score.
    pub threat_horizon: f64,
    /// Margin of the extra cleared copy of the static path (zero disables).
    pub clearance_target: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_candidates: 8,
            lateral_offsets: [0.3, 0.6, 0.9],
            offset_ramp: 1.0,
            replan_period_steps: 5,
            dynamic_lookahead: 1.0,
            margin_weight: 0.5,
            margin_scale: 0.3,
            curvature_weight: 0.2,
            threat_horizon: 1.0,
            clearance_target: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub offset: f64,
    pub path: ReferencePath,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Ok,
    /// Every candidate failed the feasibility filter; the least-bad one was kept.
    Degraded,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub status: CandidateStatus,
}

impl CandidateSet {
    pub fn unreachable() -> Self {
        Self {
            candidates: Vec::new(),
            status: CandidateStatus::Unreachable,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

/// Candidate 0 is the static shortest path from the robot. With a positive
/// `clearance_target` the next one is the same path pushed away from
/// obstacles. The rest are lateral offsets of candidate 0, blended in from
/// the robot and back out at the goal.
pub fn generate_candidates(
    robot: &RobotState,
    cost_to_go: &CostToGo,
    field: &PassabilityField,
    cfg: &PlannerConfig,
) -> CandidateSet {
    let poly = match cost_to_go.shortest_polyline(field, robot.position()) {
        Ok(p) => p,
        Err(_) => return CandidateSet::unreachable(),
    };
    let shortest = ReferencePath::from_polyline(&poly, DS_MAX);
    let mut candidates = vec![Candidate {
        index: 0,
        offset: 0.0,
        path: shortest.clone(),
        score: None,
    }];
    if cfg.clearance_target > 0.0 && cfg.max_candidates > 1 {
        candidates.push(Candidate {
            index: 1,
            offset: 0.0,
            path: ReferencePath::from_polyline(&push_clear(&poly, field, cfg.clearance_target), DS_MAX),
            score: None,
        });
    }
    let offsets: Vec<f64> = cfg
        .lateral_offsets
        .iter()
        .flat_map(|d| [*d, -*d])
        .take(cfg.max_candidates.saturating_sub(candidates.len()))
        .collect();
    for offset in offsets {
        let path = offset_path(&shortest, offset, cfg.offset_ramp, field);
        candidates.push(Candidate {
            index: candidates.len(),
            offset,
            path,
            score: None,
        });
    }
    CandidateSet {
        candidates,
        status: CandidateStatus::Ok,
    }
}

/// Moves interior waypoints along the normalized `phi_env` gradient until
/// they reach `target` margin, alternating with a moving average that takes
/// out the grid zigzags. Endpoints stay.
fn push_clear(poly: &[Vec2], field: &PassabilityField, target: f64) -> Vec<Vec2> {
    if target <= 0.0 || poly.len() < 3 {
        return poly.to_vec();
    }
    let h = field.resolution;
    let (ex, ey) = (Vec2::new(h, 0.0), Vec2::new(0.0, h));
    let push = |mut p: Vec2| {
        for _ in 0..8 {
            let phi = field.phi_env_at(p);
            if phi >= target {
                break;
            }
            let g = Vec2::new(
                field.phi_env_at(p + ex) - field.phi_env_at(p - ex),
                field.phi_env_at(p + ey) - field.phi_env_at(p - ey),
            );
            if g.norm() < 1e-9 {
                break;
            }
            p += g.normalize() * (target - phi).min(h);
        }
        p
    };
    let n = poly.len();
    let mut pts: Vec<Vec2> = poly.to_vec();
    for _ in 0..SMOOTHING_PASSES {
        for p in &mut pts[1..n - 1] {
            *p = push(*p);
        }
        let prev = pts.clone();
        for k in 1..n - 1 {
            let w = SMOOTHING_HALF_WIDTH.min(k).min(n - 1 - k);
            let sum: Vec2 = prev[k - w..=k + w].iter().sum();
            pts[k] = sum / (2 * w + 1) as f64;
        }
    }
    for p in &mut pts[1..n - 1] {
        *p = push(*p);
    }
    pts
}

const SMOOTHING_PASSES: usize = 6;
const SMOOTHING_HALF_WIDTH: usize = 4;

fn offset_path(base: &ReferencePath, offset: f64, ramp: f64, field: &PassabilityField) -> ReferencePath {
    let n = base.points.len();
    let total = base.length();
    let lo = field.origin;
    let hi = field.max_corner();
    let span = 3usize;
    let poly: Vec<Vec2> = (0..n)
        .map(|k| {
            // smoothed tangent so grid zigzags do not flip the normal
            let a = base.points[k.saturating_sub(span)];
            let b = base.points[(k + span).min(n - 1)];
            let d = b - a;
            let norm = d.norm();
            if norm < 1e-12 {
                return base.points[k];
            }
            let left = Vec2::new(-d.y, d.x) / norm;
            let s = base.s[k];
            let w = if ramp > 0.0 {
                (s / ramp).min((total - s) / ramp).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let p = base.points[k] + left * (offset * w);
            Vec2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y))
        })
        .collect();
    ReferencePath::from_polyline(&poly, DS_MAX)
}

fn dynamic_clearance_prefix(
    path: &ReferencePath,
    predictions: &[PredictedObstacle],
    geom: &SafetyGeometry,
    lookahead: f64,
) -> f64 {
    let mut worst = f64::INFINITY;
    for (p, s) in path.points.iter().zip(&path.s) {
        if *s > lookahead {
            break;
        }
        for o in predictions {
            worst = worst.min(phi_dyn(*p, &o.disk(), geom));
        }
    }
    worst
}

fn env_clearance(path: &ReferencePath, field: &PassabilityField) -> f64 {
    path.points
        .iter()
        .map(|p| field.phi_env_at(*p))
        .fold(f64::INFINITY, f64::min)
}

/// Drops candidates that touch `phi_env <= 0` anywhere or come within
/// `phi_dyn <= 0` of a predicted obstacle over their first
/// `cfg.dynamic_lookahead` meters. If nothing survives, the candidate with
/// the largest worst-case margin is kept and the set is marked degraded.
pub fn filter_feasible(
    set: CandidateSet,
    field: &PassabilityField,
    predictions: &[PredictedObstacle],
    geom: &SafetyGeometry,
    cfg: &PlannerConfig,
) -> CandidateSet {
    if set.is_empty() {
        return set;
    }
    let margins: Vec<(f64, f64)> = set
        .candidates
        .iter()
        .map(|c| {
            (
                env_clearance(&c.path, field),
                dynamic_clearance_prefix(&c.path, predictions, geom, cfg.dynamic_lookahead),
            )
        })
        .collect();
    let keep: Vec<bool> = margins.iter().map(|(e, d)| *e > 0.0 && *d > 0.0).collect();
    if keep.iter().any(|k| *k) {
        let candidates = set
            .candidates
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect();
        return CandidateSet {
            candidates,
            status: set.status,
        };
    }
    let mut best = 0;
    for (k, (e, d)) in margins.iter().enumerate() {
        let (be, bd) = margins[best];
        if e.min(*d) > be.min(bd) {
            best = k;
        }
    }
    CandidateSet {
        candidates: vec![set.candidates.into_iter().nth(best).expect("index in range")],
        status: CandidateStatus::Degraded,
    }
}

/// Higher is better: shorter, wider-margin, straighter.
pub fn score_candidate(path: &ReferencePath, field: &PassabilityField, cfg: &PlannerConfig) -> f64 {
    let mut margin_cost = 0.0;
    for k in 1..path.points.len() {
        let ds = path.s[k] - path.s[k - 1];
        margin_cost += (-field.phi_env_at(path.points[k]) / cfg.margin_scale).exp() * ds;
    }
    -path.length() - cfg.margin_weight * margin_cost - cfg.curvature_weight * path.total_turning()
}

pub fn score_all(set: &mut CandidateSet, field: &PassabilityField, cfg: &PlannerConfig) {
    for c in &mut set.candidates {
        c.score = Some(score_candidate(&c.path, field, cfg));
    }
}

/// Highest score wins; ties go to the lowest candidate index.
pub fn select_reference(set: &CandidateSet) -> Result<&Candidate, PlanError> {
    let mut best: Option<&Candidate> = None;
    for c in &set.candidates {
        let s = c.score.unwrap_or(f64::NEG_INFINITY);
        match best {
            None => best = Some(c),
            Some(b) => {
                let bs = b.score.unwrap_or(f64::NEG_INFINITY);
                if s > bs || (s == bs && c.index < b.index) {
                    best = Some(c);
                }
            }
        }
    }
    best.ok_or(PlanError::EmptyCandidateSet)
}

/// Margin, approach speed and time to contact between the robot and one
/// predicted obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEstimate {
    pub margin: f64,
    pub approach_speed: f64,
    pub time_to_contact: f64,
}

pub fn contact_estimate(robot: &RobotState, obs: &PredictedObstacle, geom: &SafetyGeometry) -> ContactEstimate {
    let p = robot.position();
    let rel = p - obs.position;
    let dist = rel.norm();
    let rel_v = robot.world_velocity() - obs.velocity;
    let range_rate = if dist > 1e-12 {
        rel.dot(&rel_v) / dist
    } else {
        -rel_v.norm()
    };
    let margin = hinge(phi_dyn(p, &obs.disk(), geom));
    let approach_speed = hinge(-range_rate);
    ContactEstimate {
        margin,
        approach_speed,
        time_to_contact: margin / (approach_speed + 1e-6),
    }
}

/// Per-obstacle threat `clamp(1 - tau_c / tau_h, 0, 1)`.
pub fn threat_from_contact(c: &ContactEstimate, horizon: f64) -> f64 {
    (1.0 - c.time_to_contact / horizon).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreatScore {
    pub value: f64,
    /// Index into the prediction list of the obstacle attaining the maximum.
    pub source: Option<usize>,
}

impl ThreatScore {
    pub const NONE: ThreatScore = ThreatScore {
        value: 0.0,
        source: None,
    };
}

pub fn threat_score(
    robot: &RobotState,
    predictions: &[PredictedObstacle],
    geom: &SafetyGeometry,
    horizon: f64,
) -> ThreatScore {
    let mut out = ThreatScore::NONE;
    for (k, o) in predictions.iter().enumerate() {
        let t = threat_from_contact(&contact_estimate(robot, o, geom), horizon);
        if t > out.value {
            out = ThreatScore {
                value: t,
                source: Some(k),
            };
        }
    }
    out
}

/// How the fast loop turns tracks into next-step obstacle states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Propagate each track to the next control instant.
    Predict,
    /// Use the latest filtered state as is.
    HoldLatest,
}

/// Predictions for control step `step`: each track is propagated from its
/// last update to `step + 1`.
pub fn predict_tracks(tracks: &[ObstacleTrack], step: u64, dt: f64, mode: PredictionMode) -> Vec<PredictedObstacle> {
    tracks
        .iter()
        .map(|t| match mode {
            PredictionMode::Predict => {
                let horizon = (step + 1).saturating_sub(t.last_update_step) as f64 * dt;
                predict_one_step(t, horizon)
            }
            PredictionMode::HoldLatest => hold_latest(t),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutput {
    pub path: Option<ReferencePath>,
    pub selected_offset: f64,
    pub predictions: Vec<PredictedObstacle>,
    pub threat: ThreatScore,
    pub status: CandidateStatus,
    pub path_step: u64,
    pub fast_step: u64,
}

/// Per-episode planner cache.
#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: PlannerConfig,
    path: Option<ReferencePath>,
    selected_offset: f64,
    status: CandidateStatus,
    path_step: Option<u64>,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Self {
        Self {
            cfg,
            path: None,
            selected_offset: 0.0,
            status: CandidateStatus::Ok,
            path_step: None,
        }
    }

    /// Predictions and threat every call; path every `replan_period_steps`.
    #[allow(clippy::too_many_arguments)]
    pub fn tick(
        &mut self,
        step: u64,
        dt: f64,
        robot: &RobotState,
        tracks: &[ObstacleTrack],
        mode: PredictionMode,
        field: &PassabilityField,
        cost_to_go: &CostToGo,
        geom: &SafetyGeometry,
    ) -> PlannerOutput {
        let predictions = predict_tracks(tracks, step, dt, mode);
        let threat = threat_score(robot, &predictions, geom, self.cfg.threat_horizon);
        let due = match self.path_step {
            None => true,
            Some(last) => step >= last + self.cfg.replan_period_steps.max(1),
        };
        if due {
            let set = generate_candidates(robot, cost_to_go, field, &self.cfg);
            if set.status == CandidateStatus::Unreachable {
                self.status = CandidateStatus::Unreachable;
            } else {
                let mut set = filter_feasible(set, field, &predictions, geom, &self.cfg);
                score_all(&mut set, field, &self.cfg);
                if let Ok(best) = select_reference(&set) {
                    self.path = Some(best.path.clone());
                    self.selected_offset = best.offset;
                }
                self.status = set.status;
            }
            self.path_step = Some(step);
        }
        PlannerOutput {
            path: self.path.clone(),
            selected_offset: self.selected_offset,
            predictions,
            threat,
            status: self.status,
            path_step: self.path_step.unwrap_or(step),
            fast_step: step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_passability_field, GridMap2p5D, TerrainLimits};

    fn field_from(map: &GridMap2p5D) -> PassabilityField {
        build_passability_field(map, &SafetyGeometry::default(), TerrainLimits::default())
    }

    fn open_map(w: usize, h: usize) -> GridMap2p5D {
        GridMap2p5D::free(Vec2::zeros(), 0.1, w, h).unwrap()
    }

    /// Plain Bellman-Ford relaxation over the same move set.
    fn oracle_shortest(field: &PassabilityField, from: (usize, usize), to: (usize, usize)) -> f64 {
        let (w, h) = (field.width, field.height);
        let free = |i: i64, j: i64| {
            i >= 0 && j >= 0 && i < w as i64 && j < h as i64 && field.phi_env[j as usize * w + i as usize] > 0.0
        };
        let mut d = vec![f64::INFINITY; w * h];
        d[to.1 * w + to.0] = 0.0;
        loop {
            let mut changed = false;
            for j in 0..h as i64 {
                for i in 0..w as i64 {
                    if !free(i, j) {
                        continue;
                    }
                    for (di, dj) in NEIGHBORS {
                        let (a, b) = (i + di, j + dj);
                        if !free(a, b) || (di != 0 && dj != 0 && !(free(a, j) && free(i, b))) {
                            continue;
                        }
                        let c = if di != 0 && dj != 0 { 0.1 * 2f64.sqrt() } else { 0.1 };
                        let cand = d[b as usize * w + a as usize] + c;
                        let k = j as usize * w + i as usize;
                        if cand < d[k] - 1e-15 {
                            d[k] = cand;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        d[from.1 * w + from.0]
    }

    #[test]
    fn dijkstra_matches_relaxation_oracle() {
        let mut map = open_map(30, 20);
        map.block_rect(Vec2::new(1.0, 0.0), Vec2::new(1.2, 1.3));
        map.block_rect(Vec2::new(2.0, 0.6), Vec2::new(2.2, 2.0));
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(2.8, 0.3),
            radius: 0.2,
        };
        let ctg = CostToGo::compute(&field, goal).unwrap();
        for (i, j) in [(3usize, 10usize), (5, 15), (0, 0), (14, 3)] {
            let k = j * 30 + i;
            if field.phi_env[k] <= 0.0 {
                continue;
            }
            let o = oracle_shortest(&field, (i, j), ctg.goal_cell);
            assert!((ctg.dist[k] - o).abs() < 1e-9, "cell ({i},{j}): {} vs {o}", ctg.dist[k]);
        }
    }

    #[test]
    fn straight_corridor_length() {
        let map = open_map(60, 20);
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(5.0, 1.0),
            radius: 0.3,
        };
        let ctg = CostToGo::compute(&field, goal).unwrap();
        let robot = RobotState::at(1.0, 1.0, 0.0);
        let set = generate_candidates(&robot, &ctg, &field, &PlannerConfig::default());
        let len = set.candidates[0].path.length();
        assert!((len - 4.0).abs() <= 0.1 * 2f64.sqrt());
        assert_eq!(len, ctg.static_path_length(&field, robot.position()).unwrap());
        let o = oracle_shortest(&field, (10, 10), ctg.goal_cell);
        assert!((len - o).abs() < 1e-9);
    }

    #[test]
    fn candidates_start_at_robot_and_respect_spacing() {
        let map = open_map(80, 50);
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(7.0, 2.5),
            radius: 0.3,
        };
        let ctg = CostToGo::compute(&field, goal).unwrap();
        let robot = RobotState::at(1.03, 2.41, 0.2);
        let set = generate_candidates(&robot, &ctg, &field, &PlannerConfig::default());
        assert_eq!(set.len(), PlannerConfig::default().max_candidates);
        for c in &set.candidates {
            assert_eq!(c.path.start(), robot.position());
            for w in c.path.s.windows(2) {
                assert!(w[1] > w[0]);
            }
            for w in c.path.points.windows(2) {
                assert!((w[1] - w[0]).norm() <= DS_MAX + 1e-12);
            }
        }
    }

    #[test]
    fn blocked_goal_is_unreachable() {
        let mut map = open_map(30, 30);
        map.block_rect(Vec2::new(2.0, 2.0), Vec2::new(2.5, 2.5));
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(2.2, 2.2),
            radius: 0.3,
        };
        assert_eq!(CostToGo::compute(&field, goal).unwrap_err(), PlanError::GoalBlocked);

        // enclosed robot: ring of blocks around it
        let mut map = open_map(40, 40);
        map.block_rect(Vec2::new(0.0, 1.8), Vec2::new(3.9, 2.0));
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(2.0, 3.5),
            radius: 0.3,
        };
        let ctg = CostToGo::compute(&field, goal).unwrap();
        let set = generate_candidates(&RobotState::at(2.0, 0.5, 0.0), &ctg, &field, &PlannerConfig::default());
        assert_eq!(set.status, CandidateStatus::Unreachable);
        assert!(set.is_empty());
    }

    fn straight(from: Vec2, to: Vec2) -> ReferencePath {
        ReferencePath::from_polyline(&[from, to], DS_MAX)
    }

    #[test]
    fn filter_removes_wall_and_obstacle_hits() {
        let mut map = open_map(60, 40);
        map.block_rect(Vec2::new(2.9, 0.0), Vec2::new(3.1, 2.0));
        let field = field_from(&map);
        let geom = SafetyGeometry::default();
        let cfg = PlannerConfig::default();
        let through_wall = Candidate {
            index: 0,
            offset: 0.0,
            path: straight(Vec2::new(1.0, 1.0), Vec2::new(5.0, 1.0)),
            score: None,
        };
        let clear = Candidate {
            index: 1,
            offset: 0.0,
            path: straight(Vec2::new(1.0, 3.2), Vec2::new(5.0, 3.2)),
            score: None,
        };
        let set = CandidateSet {
            candidates: vec![through_wall, clear.clone()],
            status: CandidateStatus::Ok,
        };
        let out = filter_feasible(set, &field, &[], &geom, &cfg);
        assert_eq!(out.candidates, vec![clear.clone()]);

        let on_start = PredictedObstacle {
            id: 0,
            position: clear.path.start(),
            velocity: Vec2::zeros(),
            radius: 0.2,
        };
        let set = CandidateSet {
            candidates: vec![clear.clone()],
            status: CandidateStatus::Ok,
        };
        let out = filter_feasible(set, &field, &[on_start], &geom, &cfg);
        assert_eq!(out.status, CandidateStatus::Degraded);

        let far = PredictedObstacle {
            position: Vec2::new(5.0, 0.0) + Vec2::new(0.0, 8.0),
            ..on_start
        };
        let set = CandidateSet {
            candidates: vec![clear.clone()],
            status: CandidateStatus::Ok,
        };
        let out = filter_feasible(set.clone(), &field, &[far], &geom, &cfg);
        assert_eq!(out, set);
    }

    #[test]
    fn degraded_keeps_best_margin() {
        let mut map = open_map(60, 40);
        map.block_rect(Vec2::new(2.9, 0.0), Vec2::new(3.1, 3.9));
        let field = field_from(&map);
        let a = Candidate {
            index: 0,
            offset: 0.0,
            path: straight(Vec2::new(1.0, 1.0), Vec2::new(3.0, 1.0)),
            score: None,
        };
        let b = Candidate {
            index: 1,
            offset: 0.3,
            path: straight(Vec2::new(1.0, 2.0), Vec2::new(2.7, 2.0)),
            score: None,
        };
        let set = CandidateSet {
            candidates: vec![a, b.clone()],
            status: CandidateStatus::Ok,
        };
        let out = filter_feasible(set, &field, &[], &SafetyGeometry::default(), &PlannerConfig::default());
        assert_eq!(out.status, CandidateStatus::Degraded);
        assert_eq!(out.candidates, vec![b]);
    }

    #[test]
    fn scoring_prefers_short_wide_straight() {
        let map = open_map(100, 100);
        let field = field_from(&map);
        let cfg = PlannerConfig::default();
        let short = straight(Vec2::new(1.0, 5.0), Vec2::new(6.0, 5.0));
        let long = straight(Vec2::new(1.0, 5.0), Vec2::new(7.0, 5.0));
        assert!(score_candidate(&short, &field, &cfg) > score_candidate(&long, &field, &cfg));

        let zig = ReferencePath::from_polyline(
            &[
                Vec2::new(1.0, 5.0),
                Vec2::new(2.0, 5.5),
                Vec2::new(3.0, 5.0),
                Vec2::new(4.0, 5.5),
            ],
            DS_MAX,
        );
        let flat = straight(Vec2::new(1.0, 5.0), Vec2::new(1.0 + zig.length(), 5.0));
        assert!((zig.length() - flat.length()).abs() < 1e-9);
        assert!(score_candidate(&flat, &field, &cfg) > score_candidate(&zig, &field, &cfg));
    }

    #[test]
    fn scoring_margin_term_direct_evaluation() {
        // Two parallel corridors of equal length: one hugging a wall
        // (margin ~0.1 m), one 1.0 m clear.
        let mut map = open_map(100, 60);
        map.block_rect(Vec2::new(0.0, 0.0), Vec2::new(9.9, 0.5));
        let field = field_from(&map);
        let cfg = PlannerConfig::default();
        let y_narrow = 0.5 + 0.35 + 0.1;
        let y_wide = 0.5 + 0.35 + 1.0;
        let narrow = straight(Vec2::new(2.0, y_narrow), Vec2::new(6.0, y_narrow));
        let wide = straight(Vec2::new(2.0, y_wide), Vec2::new(6.0, y_wide));
        let sn = score_candidate(&narrow, &field, &cfg);
        let sw = score_candidate(&wide, &field, &cfg);
        assert!(sw > sn);
        // direct evaluation with the stored margins
        let direct = |p: &ReferencePath| {
            let mut m = 0.0;
            for k in 1..p.points.len() {
                m += (-field.phi_env_at(p.points[k]) / 0.3).exp() * (p.s[k] - p.s[k - 1]);
            }
            -p.length() - 0.5 * m
        };
        assert!((sn - direct(&narrow)).abs() < 1e-12);
        assert!((sw - direct(&wide)).abs() < 1e-12);
        let expected_narrow = -4.0 - 0.5 * 4.0 * (-0.1f64 / 0.3).exp();
        assert!((sn - expected_narrow).abs() < 1e-9, "{sn} vs {expected_narrow}");
    }

    fn with_scores(scores: &[f64]) -> CandidateSet {
        let p = straight(Vec2::zeros(), Vec2::new(1.0, 0.0));
        CandidateSet {
            candidates: scores
                .iter()
                .enumerate()
                .map(|(k, s)| Candidate {
                    index: k,
                    offset: 0.0,
                    path: p.clone(),
                    score: Some(*s),
                })
                .collect(),
            status: CandidateStatus::Ok,
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_reference(&with_scores(&[-3.0])).unwrap().index, 0);
        assert_eq!(select_reference(&with_scores(&[-2.0, -2.0])).unwrap().index, 0);
        assert_eq!(select_reference(&with_scores(&[-5.0, -4.0, -6.0])).unwrap().index, 1);
        assert_eq!(
            select_reference(&with_scores(&[])).unwrap_err(),
            PlanError::EmptyCandidateSet
        );
    }

    #[test]
    fn threat_examples() {
        let geom = SafetyGeometry::default();
        let robot = RobotState::at(0.0, 0.0, 0.0);
        assert_eq!(threat_score(&robot, &[], &geom, 1.0), ThreatScore::NONE);

        // receding obstacle
        let receding = PredictedObstacle {
            id: 0,
            position: Vec2::new(2.0, 0.0),
            velocity: Vec2::new(1.0, 0.0),
            radius: 0.2,
        };
        assert_eq!(threat_score(&robot, &[receding], &geom, 1.0).value, 0.0);

        // margin 0.5, closing at 2 m/s
        let r_eff = geom.effective_radius(0.2);
        let closing = PredictedObstacle {
            id: 0,
            position: Vec2::new(r_eff + 0.5, 0.0),
            velocity: Vec2::new(-2.0, 0.0),
            radius: 0.2,
        };
        let t = threat_score(&robot, &[closing], &geom, 1.0);
        assert!((t.value - (1.0 - 0.5 / (2.0 + 1e-6))).abs() < 1e-12);
        assert!((t.value - 0.75).abs() < 1e-6);
        assert_eq!(t.source, Some(0));

        // brute-force relative motion: finite difference of center distance
        let h = 1e-6;
        let d0 = (closing.position - robot.position()).norm();
        let d1 = (closing.position + closing.velocity * h - robot.position()).norm();
        let v_app = -(d1 - d0) / h;
        assert!((v_app - 2.0).abs() < 1e-6);
    }

    #[test]
    fn threat_monotonicity_grid() {
        let horizon = 1.0;
        let mut prev_row: Option<Vec<f64>> = None;
        for mi in 0..50 {
            let m = mi as f64 * 0.05;
            let row: Vec<f64> = (0..50)
                .map(|vi| {
                    let v = vi as f64 * 0.1;
                    let c = ContactEstimate {
                        margin: m,
                        approach_speed: v,
                        time_to_contact: m / (v + 1e-6),
                    };
                    threat_from_contact(&c, horizon)
                })
                .collect();
            for w in row.windows(2) {
                assert!(w[1] >= w[0]);
            }
            if let Some(p) = &prev_row {
                for (a, b) in p.iter().zip(&row) {
                    assert!(b <= a);
                }
            }
            assert!(row.iter().all(|t| (0.0..=1.0).contains(t)));
            prev_row = Some(row);
        }
    }

    #[test]
    fn multi_rate_tick() {
        let map = open_map(80, 40);
        let field = field_from(&map);
        let goal = Goal {
            center: Vec2::new(7.0, 2.0),
            radius: 0.3,
        };
        let ctg = CostToGo::compute(&field, goal).unwrap();
        let geom = SafetyGeometry::default();
        let mut planner = Planner::new(PlannerConfig::default());
        let mut robot = RobotState::at(1.0, 2.0, 0.0);
        let mut last_path = None;
        for step in 0..10u64 {
            robot.x += 0.05;
            let track = crate::perception::ObstacleTrack::init(
                &crate::perception::Observation {
                    id: 0,
                    radius: 0.1,
                    measurement: Some((Vec2::new(4.0, 2.0 + step as f64 * 0.1), Vec2::new(0.0, -1.0))),
                    held: false,
                },
                step,
                &crate::perception::TrackerConfig::noiseless(),
            )
            .unwrap();
            let out = planner.tick(step, 0.02, &robot, &[track], PredictionMode::Predict, &field, &ctg, &geom);
            assert_eq!(out.fast_step, step);
            assert_eq!(out.path_step, if step < 5 { 0 } else { 5 });
            assert!((out.predictions[0].position.y - (2.0 + step as f64 * 0.1 - 0.02)).abs() < 1e-12);
            if step > 0 && step < 5 {
                assert_eq!(out.path, last_path);
            }
            last_path = out.path.clone();
        }
    }

    #[test]
    fn hold_latest_mode_keeps_filtered_position() {
        let cfg = crate::perception::TrackerConfig::noiseless();
        let t = crate::perception::ObstacleTrack::init(
            &crate::perception::Observation {
                id: 3,
                radius: 0.1,
                measurement: Some((Vec2::new(1.0, 1.0), Vec2::new(3.0, 0.0))),
                held: false,
            },
            10,
            &cfg,
        )
        .unwrap();
        let held = predict_tracks(&[t], 14, 0.02, PredictionMode::HoldLatest);
        assert_eq!(held[0].position, t.position());
        let pred = predict_tracks(&[t], 14, 0.02, PredictionMode::Predict);
        assert!((pred[0].position.x - (1.0 + 3.0 * 5.0 * 0.02)).abs() < 1e-12);
    }

    #[test]
    fn point_at_interpolates() {
        let p = straight(Vec2::zeros(), Vec2::new(1.0, 0.0));
        assert!((p.point_at(0.55) - Vec2::new(0.55, 0.0)).norm() < 1e-12);
        assert_eq!(p.point_at(5.0), Vec2::new(1.0, 0.0));
        assert_eq!(p.point_at(-1.0), Vec2::zeros());
    }
}
