// Navigation and reflex commands for one robot pose, with the reward terms
// that score the resulting transitions.

use safeloco::controllers::{
    nav_command, nav_reward, reflex_command, reflex_reward, select_threat, NavConfig, NavContext, ReflexConfig,
    RewardGains, Transition,
};
use safeloco::layouts::duel_map;
use safeloco::perception::PredictedObstacle;
use safeloco::planner::{Goal, ReferencePath, DS_MAX};
use safeloco::sim::{step_robot, BaseModel};
use safeloco::world::{build_passability_field, SafetyGeometry, TerrainLimits};
use safeloco::{RobotState, Vec2};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let geom = SafetyGeometry::default();
    let field = build_passability_field(&duel_map(), &geom, TerrainLimits::default());
    let goal = Goal {
        center: Vec2::new(10.0, 6.0),
        radius: 0.4,
    };
    let path = ReferencePath::from_polyline(&[Vec2::new(2.0, 6.0), goal.center], DS_MAX);
    let model = BaseModel::default();
    let gains = RewardGains::default();
    let mut robot = RobotState::at(2.0, 5.8, 0.3);
    robot.velocity = safeloco::Command::new(0.8, 0.0, 0.0);

    let u_nav = nav_command(&robot, &path, &goal, NavContext::open(), &NavConfig::default());
    let after = step_robot(&robot, u_nav, 0.02, &model, 1.0, 0.0)?;
    let t = Transition {
        before: &robot,
        after: &after,
        command: u_nav,
        dt: 0.02,
    };
    println!("nav {:?}", u_nav);
    for (k, v) in &nav_reward(&t, &path, &gains, &model).components {
        println!("  r_{k} {v:+.4}");
    }

    let preds = [
        PredictedObstacle {
            id: 0,
            position: Vec2::new(3.2, 5.8),
            velocity: Vec2::new(-2.0, 0.0),
            radius: 0.15,
        },
        PredictedObstacle {
            id: 1,
            position: Vec2::new(2.0, 8.0),
            velocity: Vec2::new(0.0, -0.5),
            radius: 0.15,
        },
    ];
    let k = select_threat(&robot, &preds, &geom).ok_or("no approaching obstacle")?;
    let u_refl = reflex_command(&robot, &preds[k], &field, &geom, &ReflexConfig::default());
    let after = step_robot(&robot, u_refl, 0.02, &model, 1.0, 0.0)?;
    let t = Transition {
        before: &robot,
        after: &after,
        command: u_refl,
        dt: 0.02,
    };
    println!("threat id {}  reflex {:?}", preds[k].id, u_refl);
    for (k, v) in &reflex_reward(&t, Some(&preds[k]), &gains, &geom, &model).components {
        println!("  r_{k} {v:+.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
