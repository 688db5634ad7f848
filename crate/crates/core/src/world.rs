//! 2.5D grid map, passability fields, dynamic clearance and the relaxed
//! Lagrangian trajectory evaluator.
//!
//! Cell `(i, j)` has its center at `origin + (i, j) * resolution`; storage is
//! row-major with `j` (y) as the row index. The queryable map extent is the
//! hull of the cell centers.

use crate::state::{Command, RobotState, Vec2};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_ROBOT_RADIUS: f64 = 0.35;
pub const DEFAULT_MARGIN: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("map has no cells ({width}x{height})")]
    Empty { width: usize, height: usize },
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("array `{key}`: expected {expected} rows, found {found}")]
    RowCount {
        key: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("array `{key}` row {row} is ragged: expected {expected} entries, found {found}")]
    Ragged {
        key: &'static str,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("array `{key}` has {found} entries, expected {expected}")]
    Length {
        key: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("roughness must be finite and >= 0 (cell {0})")]
    BadRoughness(usize),
    #[error("elevation must be finite (cell {0})")]
    BadElevation(usize),
    #[error("reading map {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing map {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FieldError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("time step must be positive (sample {0})")]
    BadTimeStep(usize),
    #[error("trajectory has {trajectory} samples but obstacle history has {history}")]
    HistoryLength { trajectory: usize, history: usize },
    #[error("weight schedule has {schedule} entries, trajectory has {trajectory}")]
    ScheduleLength { trajectory: usize, schedule: usize },
    #[error("weight at step {0} is negative or non-finite")]
    BadWeight(usize),
}

/// Planar grid with per-cell elevation and roughness.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap2p5D {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub blocked: Vec<bool>,
    pub elevation: Vec<f64>,
    pub roughness: Vec<f64>,
}

impl GridMap2p5D {
    /// Flat, obstacle-free map.
    pub fn free(origin: Vec2, resolution: f64, width: usize, height: usize) -> Result<Self, MapError> {
        let n = width * height;
        Self::new(
            origin,
            resolution,
            width,
            height,
            vec![false; n],
            vec![0.0; n],
            vec![0.0; n],
        )
    }

    pub fn new(
        origin: Vec2,
        resolution: f64,
        width: usize,
        height: usize,
        blocked: Vec<bool>,
        elevation: Vec<f64>,
        roughness: Vec<f64>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Empty { width, height });
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(MapError::BadResolution(resolution));
        }
        let n = width * height;
        for (key, len) in [
            ("blocked", blocked.len()),
            ("elevation", elevation.len()),
            ("roughness", roughness.len()),
        ] {
            if len != n {
                return Err(MapError::Length {
                    key,
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(i) = roughness.iter().position(|r| !r.is_finite() || *r < 0.0) {
            return Err(MapError::BadRoughness(i));
        }
        if let Some(i) = elevation.iter().position(|e| !e.is_finite()) {
            return Err(MapError::BadElevation(i));
        }
        Ok(Self {
            origin,
            resolution,
            width,
            height,
            blocked,
            elevation,
            roughness,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64, j as f64) * self.resolution
    }

    /// Nearest cell to a world point, clamped into the grid.
    pub fn nearest_cell(&self, p: Vec2) -> (usize, usize) {
        let f = (p - self.origin) / self.resolution;
        let i = f.x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let j = f.y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        (i, j)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let max = self.max_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= max.x && p.y <= max.y
    }

    /// Upper corner of the cell-center hull.
    pub fn max_corner(&self) -> Vec2 {
        self.cell_center(self.width - 1, self.height - 1)
    }

    /// Map diagonal, the free-space distance cap.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64) * self.resolution
    }

    pub fn roughness_at(&self, p: Vec2) -> f64 {
        let (i, j) = self.nearest_cell(p);
        self.roughness[self.index(i, j)]
    }

    /// Marks every cell whose center lies in the axis-aligned box.
    pub fn block_rect(&mut self, min: Vec2, max: Vec2) {
        self.for_cells_in(min, max, |m, k| m.blocked[k] = true);
    }

    pub fn set_roughness_rect(&mut self, min: Vec2, max: Vec2, value: f64) {
        self.for_cells_in(min, max, |m, k| m.roughness[k] = value);
    }

    fn for_cells_in(&mut self, min: Vec2, max: Vec2, mut f: impl FnMut(&mut Self, usize)) {
        for j in 0..self.height {
            for i in 0..self.width {
                let c = self.cell_center(i, j);
                if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                    let k = self.index(i, j);
                    f(self, k);
                }
            }
        }
    }

    /// Elevation gradient magnitude per cell. Central differences in the
    /// interior, one-sided on the border.
    pub fn slope(&self) -> Vec<f64> {
        let (w, h, res) = (self.width, self.height, self.resolution);
        let e = |i: usize, j: usize| self.elevation[j * w + i];
        let mut out = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let gx = if w == 1 {
                    0.0
                } else if i == 0 {
                    (e(1, j) - e(0, j)) / res
                } else if i == w - 1 {
                    (e(i, j) - e(i - 1, j)) / res
                } else {
                    (e(i + 1, j) - e(i - 1, j)) / (2.0 * res)
                };
                let gy = if h == 1 {
                    0.0
                } else if j == 0 {
                    (e(i, 1) - e(i, 0)) / res
                } else if j == h - 1 {
                    (e(i, j) - e(i, j - 1)) / res
                } else {
                    (e(i, j + 1) - e(i, j - 1)) / (2.0 * res)
                };
                out[j * w + i] = gx.hypot(gy);
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MapError::Parse { source, .. } => MapError::Parse {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, MapError> {
        let file: MapFile = toml::from_str(text).map_err(|source| MapError::Parse {
            path: "<string>".into(),
            source,
        })?;
        file.into_map()
    }

    pub fn to_toml_string(&self) -> String {
        let rows = |f: &dyn Fn(usize) -> String| -> String {
            let mut s = String::from("[\n");
            for j in 0..self.height {
                s.push_str("  [");
                for i in 0..self.width {
                    if i > 0 {
                        s.push_str(", ");
                    }
                    s.push_str(&f(self.index(i, j)));
                }
                s.push_str("],\n");
            }
            s.push(']');
            s
        };
        format!(
            "# 2.5D map. Rows are y-major starting at origin.y; row entries run along +x.\n\
             resolution = {:?}\norigin = [{:?}, {:?}]\nwidth = {}\nheight = {}\n\
             blocked = {}\nelevation = {}\nroughness = {}\n",
            self.resolution,
            self.origin.x,
            self.origin.y,
            self.width,
            self.height,
            rows(&|k| (self.blocked[k] as u8).to_string()),
            rows(&|k| format!("{:?}", self.elevation[k])),
            rows(&|k| format!("{:?}", self.roughness[k])),
        )
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct MapFile {
    resolution: f64,
    origin: [f64; 2],
    width: usize,
    height: usize,
    blocked: Vec<Vec<u8>>,
    elevation: Vec<Vec<f64>>,
    roughness: Vec<Vec<f64>>,
}

impl MapFile {
    fn into_map(self) -> Result<GridMap2p5D, MapError> {
        fn flatten<T: Copy>(
            key: &'static str,
            rows: &[Vec<T>],
            w: usize,
            h: usize,
        ) -> Result<Vec<T>, MapError> {
            if rows.len() != h {
                return Err(MapError::RowCount {
                    key,
                    expected: h,
                    found: rows.len(),
                });
            }
            let mut out = Vec::with_capacity(w * h);
            for (row, r) in rows.iter().enumerate() {
                if r.len() != w {
                    return Err(MapError::Ragged {
                        key,
                        row,
                        expected: w,
                        found: r.len(),
                    });
                }
                out.extend_from_slice(r);
            }
            Ok(out)
        }
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return Err(MapError::Empty { width: w, height: h });
        }
        let blocked = flatten("blocked", &self.blocked, w, h)?
            .into_iter()
            .map(|b| b != 0)
            .collect();
        let elevation = flatten("elevation", &self.elevation, w, h)?;
        let roughness = flatten("roughness", &self.roughness, w, h)?;
        GridMap2p5D::new(
            Vec2::new(self.origin[0], self.origin[1]),
            self.resolution,
            w,
            h,
            blocked,
            elevation,
            roughness,
        )
    }
}

/// Robot footprint radius and safety margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyGeometry {
    pub robot_radius: f64,
    pub margin: f64,
}

impl Default for SafetyGeometry {
    fn default() -> Self {
        Self {
            robot_radius: DEFAULT_ROBOT_RADIUS,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl SafetyGeometry {
    /// `r_eff = r_obstacle + r_robot + margin`.
    pub fn effective_radius(&self, obstacle_radius: f64) -> f64 {
        obstacle_radius + self.robot_radius + self.margin
    }

    /// Center distance at which bodies touch (the margin is not part of it).
    pub fn contact_radius(&self, obstacle_radius: f64) -> f64 {
        obstacle_radius + self.robot_radius
    }
}

/// Moving disk obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDisk {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Per-cell signed margins derived from a [`GridMap2p5D`].
#[derive(Debug, Clone)]
pub struct PassabilityField {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub robot_radius: f64,
    pub phi_terr: Vec<f64>,
    pub phi_static: Vec<f64>,
    pub phi_env: Vec<f64>,
}

/// Terrain thresholds for the terrain passability component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainLimits {
    pub roughness_limit: f64,
    pub slope_limit: f64,
}

impl Default for TerrainLimits {
    fn default() -> Self {
        Self {
            roughness_limit: 0.6,
            slope_limit: 0.5,
        }
    }
}

/// Signed margin per cell: distance to the nearest infeasible cell center
/// minus the robot radius for feasible cells, `-(distance to the nearest
/// feasible cell) - r` for infeasible ones. Distances are capped at `cap`.
fn signed_margin(map: &GridMap2p5D, infeasible: &[bool], robot_radius: f64, cap: f64) -> Vec<f64> {
    let w = map.width as i64;
    let bad: Vec<(i64, i64)> = cells_where(map, infeasible, true);
    let good: Vec<(i64, i64)> = cells_where(map, infeasible, false);
    let res = map.resolution;
    let nearest = |i: i64, j: i64, set: &[(i64, i64)]| -> f64 {
        let mut best = i64::MAX;
        for &(a, b) in set {
            let d2 = (a - i) * (a - i) + (b - j) * (b - j);
            if d2 < best {
                best = d2;
            }
        }
        if best == i64::MAX {
            f64::INFINITY
        } else {
            (best as f64).sqrt() * res
        }
    };
    (0..map.len())
        .map(|k| {
            let (i, j) = (k as i64 % w, k as i64 / w);
            if infeasible[k] {
                -nearest(i, j, &good).min(cap) - robot_radius
            } else {
                nearest(i, j, &bad).min(cap) - robot_radius
            }
        })
        .collect()
}

fn cells_where(map: &GridMap2p5D, mask: &[bool], value: bool) -> Vec<(i64, i64)> {
    let w = map.width;
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m == value)
        .map(|(k, _)| ((k % w) as i64, (k / w) as i64))
        .collect()
}

/// Builds the terrain, static and combined passability fields by exact
/// brute-force distance transform (O(cells x infeasible cells)).
pub fn build_passability_field(
    map: &GridMap2p5D,
    geom: &SafetyGeometry,
    limits: TerrainLimits,
) -> PassabilityField {
    let cap = map.diagonal();
    let slope = map.slope();
    let terrain_bad: Vec<bool> = (0..map.len())
        .map(|k| map.roughness[k] > limits.roughness_limit || slope[k] > limits.slope_limit)
        .collect();
    let phi_static = signed_margin(map, &map.blocked, geom.robot_radius, cap);
    let phi_terr = signed_margin(map, &terrain_bad, geom.robot_radius, cap);
    let phi_env = phi_terr
        .iter()
        .zip(&phi_static)
        .map(|(a, b)| a.min(*b))
        .collect();
    PassabilityField {
        origin: map.origin,
        resolution: map.resolution,
        width: map.width,
        height: map.height,
        robot_radius: geom.robot_radius,
        phi_terr,
        phi_static,
        phi_env,
    }
}

impl PassabilityField {
    /// True when no cell has a positive combined margin.
    pub fn all_infeasible(&self) -> bool {
        self.phi_env.iter().all(|v| *v <= 0.0)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64, j as f64) * self.resolution
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let f = (p - self.origin) / self.resolution;
        let (i, j) = (f.x.round(), f.y.round());
        if i < 0.0 || j < 0.0 || i > (self.width - 1) as f64 || j > (self.height - 1) as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn max_corner(&self) -> Vec2 {
        self.cell_center(self.width - 1, self.height - 1)
    }

    /// Distance from `p` to the cell-center hull, zero inside.
    pub fn distance_outside(&self, p: Vec2) -> f64 {
        let max = self.max_corner();
        let dx = (self.origin.x - p.x).max(0.0).max(p.x - max.x);
        let dy = (self.origin.y - p.y).max(0.0).max(p.y - max.y);
        dx.hypot(dy)
    }

    pub fn env_cell(&self, i: usize, j: usize) -> f64 {
        self.phi_env[self.index(i, j)]
    }

    /// Bilinear interpolation of `phi_env`. Outside the map returns
    /// `-(distance outside + robot radius)`.
    pub fn phi_env_at(&self, p: Vec2) -> f64 {
        self.sample(&self.phi_env, p)
    }

    pub fn phi_static_at(&self, p: Vec2) -> f64 {
        self.sample(&self.phi_static, p)
    }

    pub fn phi_terr_at(&self, p: Vec2) -> f64 {
        self.sample(&self.phi_terr, p)
    }

    fn sample(&self, values: &[f64], p: Vec2) -> f64 {
        let out = self.distance_outside(p);
        if out > 0.0 || !p.x.is_finite() || !p.y.is_finite() {
            return -(out + self.robot_radius);
        }
        let f = (p - self.origin) / self.resolution;
        let (i0, tx) = split_axis(f.x, self.width);
        let (j0, ty) = split_axis(f.y, self.height);
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let v00 = values[self.index(i0, j0)];
        let v10 = values[self.index(i1, j0)];
        let v01 = values[self.index(i0, j1)];
        let v11 = values[self.index(i1, j1)];
        if tx == 0.0 && ty == 0.0 {
            return v00;
        }
        let a = v00 + (v10 - v00) * tx;
        let b = v01 + (v11 - v01) * tx;
        a + (b - a) * ty
    }
}

fn split_axis(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let fl = f.floor().clamp(0.0, (n - 2) as f64);
    let t = (f - fl).clamp(0.0, 1.0);
    (fl as usize, t)
}

/// Dynamic clearance: center distance minus the effective radius.
pub fn phi_dyn(p: Vec2, obs: &ObstacleDisk, geom: &SafetyGeometry) -> f64 {
    (p - obs.position).norm() - geom.effective_radius(obs.radius)
}

/// Pointwise minimum of environment passability and all dynamic clearances.
pub fn phi_st(p: Vec2, field: &PassabilityField, obstacles: &[ObstacleDisk], geom: &SafetyGeometry) -> f64 {
    obstacles
        .iter()
        .map(|o| phi_dyn(p, o, geom))
        .fold(field.phi_env_at(p), f64::min)
}

#[inline]
pub fn hinge(z: f64) -> f64 {
    z.max(0.0)
}

/// One trajectory sample for [`relaxed_lagrangian`].
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub state: RobotState,
    pub command: Command,
    pub dt: f64,
}

/// Constraint-pressure schedule `w(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSchedule {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl WeightSchedule {
    fn at(&self, k: usize) -> f64 {
        match self {
            WeightSchedule::Constant(w) => *w,
            WeightSchedule::PerStep(ws) => ws[k],
        }
    }
}

pub struct LagrangianWeights<'a> {
    pub schedule: WeightSchedule,
    pub running_cost: &'a dyn Fn(&RobotState, &Command) -> f64,
}

/// `sum_t (l(x_t, u_t) + w(t) * [-phi_st(p_t, t)]_+) * dt`.
///
/// `obstacle_history[k]` holds the obstacles present at sample `k`. When the
/// spatial-temporal margin is positive everywhere this is exactly the
/// discretized running-cost integral.
pub fn relaxed_lagrangian(
    trajectory: &[TrajectorySample],
    weights: &LagrangianWeights<'_>,
    field: &PassabilityField,
    obstacle_history: &[Vec<ObstacleDisk>],
    geom: &SafetyGeometry,
) -> Result<f64, FieldError> {
    if trajectory.is_empty() {
        return Err(FieldError::EmptyTrajectory);
    }
    if obstacle_history.len() != trajectory.len() {
        return Err(FieldError::HistoryLength {
            trajectory: trajectory.len(),
            history: obstacle_history.len(),
        });
    }
    if let WeightSchedule::PerStep(ws) = &weights.schedule {
        if ws.len() != trajectory.len() {
            return Err(FieldError::ScheduleLength {
                trajectory: trajectory.len(),
                schedule: ws.len(),
            });
        }
    }
    let mut total = 0.0;
    for (k, (sample, obstacles)) in trajectory.iter().zip(obstacle_history).enumerate() {
        if !(sample.dt > 0.0) {
            return Err(FieldError::BadTimeStep(k));
        }
        let w = weights.schedule.at(k);
        if !(w >= 0.0) || !w.is_finite() {
            return Err(FieldError::BadWeight(k));
        }
        let cost = (weights.running_cost)(&sample.state, &sample.command);
        let violation = hinge(-phi_st(sample.state.position(), field, obstacles, geom));
        total += (cost + w * violation) * sample.dt;
    }
    Ok(total)
}
