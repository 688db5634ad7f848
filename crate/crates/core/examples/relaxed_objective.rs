// Evaluates the hinge-relaxed trajectory objective on a straight run that
// first stays clear and then crosses a passing obstacle.

use safeloco::layouts::duel_map;
use safeloco::world::{
    build_passability_field, relaxed_lagrangian, LagrangianWeights, ObstacleDisk, SafetyGeometry, TerrainLimits,
    TrajectorySample, WeightSchedule,
};
use safeloco::{Command, RobotState, Vec2};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let field = build_passability_field(&duel_map(), &SafetyGeometry::default(), TerrainLimits::default());
    let geom = SafetyGeometry::default();
    let dt = 0.02;
    let u = Command::new(1.0, 0.0, 0.0);
    let traj: Vec<TrajectorySample> = (0..200)
        .map(|k| TrajectorySample {
            state: RobotState::at(2.0 + k as f64 * dt, 6.0, 0.0),
            command: u,
            dt,
        })
        .collect();
    let effort = |_: &RobotState, c: &Command| c.norm().powi(2);
    let far = vec![Vec::new(); traj.len()];
    let post = ObstacleDisk {
        position: Vec2::new(3.5, 6.3),
        velocity: Vec2::zeros(),
        radius: 0.15,
    };
    let near = vec![vec![post]; traj.len()];
    for w in [0.0, 10.0, 100.0] {
        let weights = LagrangianWeights {
            schedule: WeightSchedule::Constant(w),
            running_cost: &effort,
        };
        let clear = relaxed_lagrangian(&traj, &weights, &field, &far, &geom)?;
        let crossed = relaxed_lagrangian(&traj, &weights, &field, &near, &geom)?;
        println!("w={w:5.1}  clear {clear:.4}  with obstacle {crossed:.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
