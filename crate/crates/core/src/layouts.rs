//! Built-in benchmark layouts. The files under `scenarios/` are generated
//! from these functions by the `write_scenarios` example.

use crate::planner::Goal;
use crate::sim::scenario::{AttackSchedule, ScenarioConfig};
use crate::sim::{AttackMode, RandomizationProfile, Range};
use crate::state::Vec2;
use crate::world::GridMap2p5D;

pub const COUPLED_MAP_FILE: &str = "coupled_map.toml";
pub const DUEL_MAP_FILE: &str = "duel_map.toml";

/// 12 m x 8 m walled course: a doorway, a central pillar, a staggered gate,
/// a rough ramp and an impassable rubble patch.
pub fn coupled_map() -> GridMap2p5D {
    let mut m = GridMap2p5D::free(Vec2::zeros(), 0.1, 121, 81).expect("valid dimensions");
    let r = |x0: f64, y0: f64, x1: f64, y1: f64| (Vec2::new(x0, y0), Vec2::new(x1, y1));
    for (lo, hi) in [
        r(-0.05, -0.05, 12.05, 0.05),
        r(-0.05, 7.95, 12.05, 8.05),
        r(-0.05, -0.05, 0.05, 8.05),
        r(11.95, -0.05, 12.05, 8.05),
        r(3.0, 0.0, 3.5, 3.2),
        r(3.0, 4.8, 3.5, 8.0),
        r(6.2, 3.3, 7.0, 4.7),
        r(8.6, 0.0, 9.0, 2.2),
        r(8.6, 5.8, 9.0, 8.0),
    ] {
        m.block_rect(lo, hi);
    }
    let (lo, hi) = r(4.2, 1.0, 6.0, 7.0);
    m.set_roughness_rect(lo, hi, 0.4);
    let (lo, hi) = r(9.8, 4.9, 10.4, 5.6);
    m.set_roughness_rect(lo, hi, 0.9);
    // shallow ramp across the rough band
    for j in 0..m.height {
        for i in 0..m.width {
            let x = m.cell_center(i, j).x;
            let k = m.index(i, j);
            m.elevation[k] = 0.08 * (x - 4.2).clamp(0.0, 1.8);
        }
    }
    m
}

pub fn coupled_config() -> ScenarioConfig {
    let goal = Goal {
        center: Vec2::new(11.0, 4.0),
        radius: 0.4,
    };
    let mut c = ScenarioConfig::basic(COUPLED_MAP_FILE, Vec2::new(1.0, 4.0), 0.0, goal, 25.0);
    c.name = "coupled".into();
    c.start.half_extent = Vec2::new(0.3, 1.0);
    c.start.heading_spread = 0.3;
    c.perception_period_steps = 5;
    c.attacks = AttackSchedule {
        count: 3,
        spawn_times: Vec::new(),
        spawn_window: Range::new(0.5, 9.0),
        mode: AttackMode::Aimed,
        radii: vec![0.10, 0.15, 0.20],
        min_distance: 1.5,
        despawn_distance: 8.0,
    };
    c
}

/// Open 12 m x 12 m floor.
pub fn duel_map() -> GridMap2p5D {
    GridMap2p5D::free(Vec2::zeros(), 0.1, 121, 121).expect("valid dimensions")
}

/// One aimed obstacle no faster than the robot, exact sensing.
pub fn duel_config() -> ScenarioConfig {
    let goal = Goal {
        center: Vec2::new(10.0, 6.0),
        radius: 0.4,
    };
    let mut c = ScenarioConfig::basic(DUEL_MAP_FILE, Vec2::new(2.0, 6.0), 0.0, goal, 12.0);
    c.name = "duel".into();
    c.start.half_extent = Vec2::new(0.2, 0.5);
    c.start.heading_spread = 0.5;
    let mut profile = RandomizationProfile::exact();
    profile.obstacle_speed = Range::new(0.5, 1.5);
    c.profile = profile;
    c.attacks = AttackSchedule {
        count: 1,
        spawn_times: Vec::new(),
        spawn_window: Range::new(0.5, 4.0),
        mode: AttackMode::Aimed,
        radii: vec![0.15],
        min_distance: 1.5,
        despawn_distance: 8.0,
    };
    c
}
