// Generates, filters and scores candidate paths on the coupled course with
// and without an obstacle blocking the straight line.

use safeloco::layouts::{coupled_config, coupled_map};
use safeloco::perception::PredictedObstacle;
use safeloco::planner::{
    filter_feasible, generate_candidates, score_all, select_reference, threat_score, CostToGo, PlannerConfig,
};
use safeloco::world::{build_passability_field, SafetyGeometry, TerrainLimits};
use safeloco::{RobotState, Vec2};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let scn = coupled_config();
    let geom = SafetyGeometry::default();
    let field = build_passability_field(&coupled_map(), &geom, TerrainLimits::default());
    let ctg = CostToGo::compute(&field, scn.goal)?;
    let cfg = PlannerConfig::default();
    let robot = RobotState::at(1.0, 4.0, 0.0);
    println!("static shortest path {:.2} m", ctg.static_path_length(&field, robot.position())?);

    let blocker = PredictedObstacle {
        id: 0,
        position: Vec2::new(1.8, 4.0),
        velocity: Vec2::new(-1.0, 0.0),
        radius: 0.2,
    };
    for preds in [vec![], vec![blocker]] {
        let set = generate_candidates(&robot, &ctg, &field, &cfg);
        let generated = set.len();
        let mut set = filter_feasible(set, &field, &preds, &geom, &cfg);
        score_all(&mut set, &field, &cfg);
        let best = select_reference(&set)?;
        let threat = threat_score(&robot, &preds, &geom, cfg.threat_horizon);
        println!(
            "obstacles {}  candidates {generated} -> {} ({:?})  chosen offset {:+.1}  length {:.2}  threat {:.2}",
            preds.len(),
            set.len(),
            set.status,
            best.offset,
            best.path.length(),
            threat.value
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
