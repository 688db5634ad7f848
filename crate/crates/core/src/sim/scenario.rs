//! Scenario files and the read-only state shared by all episodes of a batch.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controllers::{NavConfig, ReflexConfig, RewardGains};
use crate::handoff::{HandoffConfig, HandoffError};
use crate::planner::{CostToGo, Goal, PlanError, PlannerConfig};
use crate::shield::ShieldConfig;
use crate::sim::{AttackMode, BaseModel, RandomizationProfile, Range, SimError};
use crate::state::Vec2;
use crate::world::{build_passability_field, GridMap2p5D, MapError, PassabilityField, SafetyGeometry, TerrainLimits};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("loading map {path}: {source}")]
    Map { path: PathBuf, source: MapError },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Handoff(#[from] HandoffError),
    #[error("planning on the static map: {0}")]
    Plan(#[from] PlanError),
}

/// Ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    HardHandoff,
    NoCbf,
    NoPred,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::HardHandoff, Variant::NoCbf, Variant::NoPred];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::HardHandoff => "hard_handoff",
            Variant::NoCbf => "no_cbf",
            Variant::NoPred => "no_pred",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, hard_handoff, no_cbf or no_pred)"))
    }
}

/// Axis-aligned start box with a heading interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartRegion {
    pub center: Vec2,
    #[serde(default)]
    pub half_extent: Vec2,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub heading_spread: f64,
}

/// When and how obstacles are thrown at the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSchedule {
    pub count: usize,
    /// Explicit spawn times (s). When empty, `count` times are drawn
    /// uniformly from `spawn_window`.
    pub spawn_times: Vec<f64>,
    pub spawn_window: Range,
    pub mode: AttackMode,
    pub radii: Vec<f64>,
    /// Resampling distance for spawn offsets, on top of the contact check.
    pub min_distance: f64,
    /// Obstacles farther than this from the robot are removed.
    pub despawn_distance: f64,
}

impl Default for AttackSchedule {
    fn default() -> Self {
        Self {
            count: 0,
            spawn_times: Vec::new(),
            spawn_window: Range::new(0.0, 0.0),
            mode: AttackMode::Aimed,
            radii: vec![0.15],
            min_distance: 0.0,
            despawn_distance: 8.0,
        }
    }
}

/// Weights and reference scales of the locomotion cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcWeights {
    pub goal: f64,
    pub tilt: f64,
    pub command: f64,
    pub tilt_scale: f64,
    pub command_scale: f64,
}

impl Default for LcWeights {
    fn default() -> Self {
        Self {
            goal: 1.0 / 3.0,
            tilt: 1.0 / 3.0,
            command: 1.0 / 3.0,
            tilt_scale: 0.3,
            command_scale: 1.0,
        }
    }
}

fn default_dt() -> f64 {
    0.02
}

fn default_period() -> u64 {
    1
}

/// Contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Map file, relative to the scenario file.
    pub map: PathBuf,
    pub start: StartRegion,
    pub goal: Goal,
    /// Episode horizon (s).
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub attacks: AttackSchedule,
    #[serde(default)]
    pub profile: RandomizationProfile,
    #[serde(default = "Variant::full")]
    pub variant: Variant,
    /// Obstacle sensing and filtering period in control steps.
    #[serde(default = "default_period")]
    pub perception_period_steps: u64,
    #[serde(default)]
    pub geometry: SafetyGeometry,
    #[serde(default)]
    pub terrain: TerrainLimits,
    #[serde(default)]
    pub base: BaseModel,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub nav: NavConfig,
    #[serde(default)]
    pub reflex: ReflexConfig,
    #[serde(default)]
    pub handoff: HandoffConfig,
    #[serde(default)]
    pub shield: ShieldConfig,
    #[serde(default)]
    pub rewards: RewardGains,
    #[serde(default)]
    pub lc: LcWeights,
}

impl Variant {
    fn full() -> Self {
        Variant::Full
    }
}

impl ScenarioConfig {
    /// Fixed start pose, no attacks, default profile and modules.
    pub fn basic(map: impl Into<PathBuf>, start: Vec2, heading: f64, goal: Goal, horizon: f64) -> Self {
        Self {
            name: String::new(),
            map: map.into(),
            start: StartRegion {
                center: start,
                half_extent: Vec2::zeros(),
                heading,
                heading_spread: 0.0,
            },
            goal,
            horizon,
            dt: default_dt(),
            attacks: AttackSchedule::default(),
            profile: RandomizationProfile::default(),
            variant: Variant::Full,
            perception_period_steps: default_period(),
            geometry: SafetyGeometry::default(),
            terrain: TerrainLimits::default(),
            base: BaseModel::default(),
            planner: PlannerConfig::default(),
            nav: NavConfig::default(),
            reflex: ReflexConfig::default(),
            handoff: HandoffConfig::default(),
            shield: ShieldConfig::default(),
            rewards: RewardGains::default(),
            lc: LcWeights::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.goal.radius > 0.0) {
            return bad("goal radius must be positive");
        }
        if self.perception_period_steps == 0 {
            return bad("perception_period_steps must be at least 1");
        }
        let a = &self.attacks;
        if !a.spawn_times.is_empty() && a.spawn_times.len() != a.count {
            return bad("attacks.spawn_times must list exactly `count` times");
        }
        if a.spawn_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("spawn times must be finite and non-negative");
        }
        if a.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("obstacle radii must be positive");
        }
        if !(self.shield.alpha > 0.0) {
            return bad("shield alpha must be positive");
        }
        self.profile.validate()?;
        self.handoff.validate()?;
        Ok(())
    }
}

/// A validated scenario with its map and derived fields, shared read-only
/// by every episode.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub map: Arc<GridMap2p5D>,
    pub field: Arc<PassabilityField>,
    pub cost_to_go: Arc<CostToGo>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = ScenarioConfig::from_toml_str(&text)?;
        let map_path = path.parent().unwrap_or(Path::new(".")).join(&config.map);
        let map = GridMap2p5D::load(&map_path).map_err(|source| ScenarioError::Map { path: map_path, source })?;
        Self::from_parts(config, map)
    }

    pub fn from_parts(config: ScenarioConfig, map: GridMap2p5D) -> Result<Self, ScenarioError> {
        config.validate()?;
        let field = build_passability_field(&map, &config.geometry, config.terrain);
        let cost_to_go = CostToGo::compute(&field, config.goal)?;
        Ok(Self {
            config,
            map: Arc::new(map),
            field: Arc::new(field),
            cost_to_go: Arc::new(cost_to_go),
        })
    }

    /// Same map and fields under another variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut s = self.clone();
        s.config.variant = variant;
        s
    }
}
