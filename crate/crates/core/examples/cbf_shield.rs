// Builds the CBF constraint set for a robot between a wall and an incoming
// ball and projects a few nominal commands onto it.

use safeloco::perception::PredictedObstacle;
use safeloco::shield::{build_safe_set, is_safe, kkt_holds, project_safe, ShieldConfig};
use safeloco::world::{build_passability_field, GridMap2p5D, SafetyGeometry, TerrainLimits};
use safeloco::{Command, CommandBox, RobotState, Vec2};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut map = GridMap2p5D::free(Vec2::zeros(), 0.05, 120, 80)?;
    map.block_rect(Vec2::new(0.0, 3.0), Vec2::new(6.0, 4.0));
    let geom = SafetyGeometry::default();
    let field = build_passability_field(&map, &geom, TerrainLimits::default());
    let robot = RobotState::at(2.0, 2.4, 0.0);
    let ball = PredictedObstacle {
        id: 0,
        position: Vec2::new(3.2, 2.2),
        velocity: Vec2::new(-2.0, 0.0),
        radius: 0.15,
    };
    let set = build_safe_set(&robot, &field, &[ball], Some(0), &geom, CommandBox::default(), &ShieldConfig::default());
    for c in &set.constraints {
        println!("{:?}  a=({:+.2},{:+.2},{:+.2})  b={:+.3}  h={:.3}", c.tag, c.a.x, c.a.y, c.a.z, c.b, c.h);
    }
    for u0 in [Command::new(0.0, 0.0, 0.0), Command::new(1.0, 0.5, 0.0), Command::new(-1.0, 0.0, 1.0)] {
        let (u, status) = project_safe(u0, &set);
        println!(
            "u0 ({:+.2},{:+.2},{:+.2}) -> ({:+.3},{:+.3},{:+.3}) {}  safe {}  kkt {}",
            u0.vx,
            u0.vy,
            u0.omega,
            u.vx,
            u.vy,
            u.omega,
            status.as_str(),
            is_safe(u, &set),
            kkt_holds(u0, u, &set, 1e-7)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
