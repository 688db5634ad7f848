// Builds the static passability field of the coupled course and probes
// the environment, dynamic and combined margins.

use safeloco::layouts::coupled_map;
use safeloco::world::{build_passability_field, phi_dyn, phi_st, ObstacleDisk, SafetyGeometry, TerrainLimits};
use safeloco::Vec2;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let map = coupled_map();
    let geom = SafetyGeometry::default();
    let field = build_passability_field(&map, &geom, TerrainLimits::default());

    println!("{:>12} {:>8} {:>8} {:>8}", "point", "terr", "static", "env");
    for p in [Vec2::new(1.0, 4.0), Vec2::new(3.25, 4.0), Vec2::new(6.6, 4.0), Vec2::new(10.1, 5.2)] {
        println!(
            "({:4.2},{:4.2}) {:8.3} {:8.3} {:8.3}",
            p.x,
            p.y,
            field.phi_terr_at(p),
            field.phi_static_at(p),
            field.phi_env_at(p)
        );
    }

    let ball = ObstacleDisk {
        position: Vec2::new(2.0, 4.0),
        velocity: Vec2::new(-2.0, 0.0),
        radius: 0.15,
    };
    let p = Vec2::new(1.0, 4.0);
    println!("phi_dyn {:.3}  phi_st {:.3}", phi_dyn(p, &ball, &geom), phi_st(p, &field, &[ball], &geom));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
