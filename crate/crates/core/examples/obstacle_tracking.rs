// Tracks a thrown ball through noisy, dropout-prone measurements with the
// constant-velocity filter and compares predicted and held states.

use safeloco::perception::{hold_latest, predict_one_step, track_update, ObstacleTrack, Observer, TrackerConfig};
use safeloco::seeding::SeededStream;
use safeloco::sim::RandomizationProfile;
use safeloco::world::ObstacleDisk;
use safeloco::Vec2;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let profile = RandomizationProfile::default();
    let cfg = TrackerConfig::from_profile(&profile);
    let mut rng = SeededStream::derive(7, &[1]);
    let mut observer = Observer::new();
    let dt = 0.02;
    let mut ball = ObstacleDisk {
        position: Vec2::new(5.0, 1.0),
        velocity: Vec2::new(-2.5, 0.4),
        radius: 0.15,
    };
    let mut track: Option<ObstacleTrack> = None;
    for step in 0..50u64 {
        let obs = observer.observe_obstacles(&[(0, ball)], &mut rng, &profile)[0];
        track = match track {
            None => ObstacleTrack::init(&obs, step, &cfg),
            Some(t) => Some(track_update(&t, &obs, dt, step, &cfg).0),
        };
        let t = track.expect("first measurement is valid");
        let now = ball.position;
        ball.position += ball.velocity * dt;
        if step % 10 == 9 {
            println!(
                "step {step:2}  filter err {:.3}  vel err {:.3}  next-step: predicted err {:.3}  held err {:.3}",
                (t.position() - now).norm(),
                (t.velocity() - ball.velocity).norm(),
                (predict_one_step(&t, dt).position - ball.position).norm(),
                (hold_latest(&t).position - ball.position).norm(),
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
