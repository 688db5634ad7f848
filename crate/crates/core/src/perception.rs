//! Simulated noisy sensing with dropout, constant-velocity tracking and
//! one-step obstacle prediction.

use nalgebra::{Matrix4, Vector4};

use crate::seeding::SeededStream;
use crate::sim::RandomizationProfile;
use crate::state::{wrap_angle, Command, RobotState, Vec2};
use crate::world::ObstacleDisk;

/// One obstacle measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub id: usize,
    pub radius: f64,
    /// `(position, velocity)`; `None` for an invalid observation.
    pub measurement: Option<(Vec2, Vec2)>,
    /// Repeats the last valid value during a dropout.
    pub held: bool,
}

impl Observation {
    pub fn is_valid(&self) -> bool {
        self.measurement.is_some()
    }

    /// Fresh measurement usable for a filter correction.
    pub fn is_fresh(&self) -> bool {
        self.measurement.is_some() && !self.held
    }
}

#[derive(Debug, Clone, Default)]
struct DropoutState {
    remaining: u32,
    last_valid: Option<(Vec2, Vec2)>,
    prev_fresh: bool,
}

/// Per-episode sensor model. Dropout state is kept per obstacle id.
#[derive(Debug, Clone, Default)]
pub struct Observer {
    dropout: Vec<DropoutState>,
}

impl Observer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Robot state with per-axis uniform noise on pose and velocities.
    pub fn observe_robot(&self, truth: &RobotState, rng: &mut SeededStream, profile: &RandomizationProfile) -> RobotState {
        let mut s = *truth;
        s.x += profile.base_position_noise.sample(rng);
        s.y += profile.base_position_noise.sample(rng);
        s.theta = wrap_angle(s.theta + profile.base_yaw_noise.sample(rng));
        s.velocity = Command::new(
            s.velocity.vx + profile.base_linear_velocity_noise.sample(rng),
            s.velocity.vy + profile.base_linear_velocity_noise.sample(rng),
            s.velocity.omega + profile.base_angular_velocity_noise.sample(rng),
        );
        s
    }

    /// Measures each `(id, obstacle)` pair. A dropout, once started with
    /// `dropout_probability`, repeats the last valid measurement for a
    /// uniformly drawn 1..=3 (profile-configured) steps.
    pub fn observe_obstacles(
        &mut self,
        truth: &[(usize, ObstacleDisk)],
        rng: &mut SeededStream,
        profile: &RandomizationProfile,
    ) -> Vec<Observation> {
        truth
            .iter()
            .map(|&(id, o)| {
                if self.dropout.len() <= id {
                    self.dropout.resize(id + 1, DropoutState::default());
                }
                // draw noise unconditionally so the stream position does not
                // depend on dropout history
                let noisy_p = o.position
                    + Vec2::new(
                        profile.obstacle_position_noise.sample(rng),
                        profile.obstacle_position_noise.sample(rng),
                    );
                let noisy_v = o.velocity
                    + Vec2::new(
                        profile.obstacle_velocity_noise.sample(rng),
                        profile.obstacle_velocity_noise.sample(rng),
                    );
                let start_dropout = rng.chance(profile.dropout_probability);
                let hold = rng.int_inclusive(profile.dropout_hold_min, profile.dropout_hold_max);

                let st = &mut self.dropout[id];
                if st.remaining == 0 && st.prev_fresh && start_dropout && hold > 0 {
                    st.remaining = hold;
                }
                if st.remaining > 0 {
                    st.remaining -= 1;
                    st.prev_fresh = false;
                    return Observation {
                        id,
                        radius: o.radius,
                        measurement: st.last_valid,
                        held: true,
                    };
                }
                st.last_valid = Some((noisy_p, noisy_v));
                st.prev_fresh = true;
                Observation {
                    id,
                    radius: o.radius,
                    measurement: st.last_valid,
                    held: false,
                }
            })
            .collect()
    }
}

/// Noise parameters of the constant-velocity filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Acceleration noise std (m/s^2).
    pub process_noise: f64,
    pub position_std: f64,
    pub velocity_std: f64,
    /// Covariance used when a track has to be reset.
    pub prior_position_std: f64,
    pub prior_velocity_std: f64,
}

impl TrackerConfig {
    /// Measurement stds matched to the profile's uniform noise widths.
    pub fn from_profile(profile: &RandomizationProfile) -> Self {
        Self {
            process_noise: 0.5,
            position_std: profile.obstacle_position_noise.uniform_std(),
            velocity_std: profile.obstacle_velocity_noise.uniform_std(),
            prior_position_std: 0.5,
            prior_velocity_std: 2.0,
        }
    }

    pub fn noiseless() -> Self {
        Self {
            process_noise: 0.0,
            position_std: 0.0,
            velocity_std: 0.0,
            prior_position_std: 0.5,
            prior_velocity_std: 2.0,
        }
    }

    fn measurement_cov(&self) -> Matrix4<f64> {
        let (p, v) = (self.position_std.powi(2), self.velocity_std.powi(2));
        Matrix4::from_diagonal(&Vector4::new(p, p, v, v))
    }

    fn prior_cov(&self) -> Matrix4<f64> {
        let (p, v) = (self.prior_position_std.powi(2), self.prior_velocity_std.powi(2));
        Matrix4::from_diagonal(&Vector4::new(p, p, v, v))
    }
}

/// Filtered obstacle state `[px, py, vx, vy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleTrack {
    pub id: usize,
    pub radius: f64,
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub last_update_step: u64,
}

/// Outcome of a filter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackEvent {
    Corrected,
    PredictedOnly,
    /// Covariance lost positive semidefiniteness and was reset to the prior.
    Reset,
}

/// Obstacle state predicted for the next control instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedObstacle {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

impl PredictedObstacle {
    pub fn disk(&self) -> ObstacleDisk {
        ObstacleDisk {
            position: self.position,
            velocity: self.velocity,
            radius: self.radius,
        }
    }
}

impl ObstacleTrack {
    /// Starts a track at a valid observation.
    pub fn init(obs: &Observation, step: u64, cfg: &TrackerConfig) -> Option<Self> {
        let (p, v) = obs.measurement?;
        Some(Self {
            id: obs.id,
            radius: obs.radius,
            state: Vector4::new(p.x, p.y, v.x, v.y),
            covariance: cfg.measurement_cov(),
            last_update_step: step,
        })
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.state[2], self.state[3])
    }

    pub fn is_psd(&self) -> bool {
        is_symmetric_psd(&self.covariance)
    }
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Discrete white-noise-acceleration process covariance.
fn process_cov(dt: f64, q: f64) -> Matrix4<f64> {
    let q2 = q * q;
    let (a, b, c) = (dt.powi(4) / 4.0 * q2, dt.powi(3) / 2.0 * q2, dt * dt * q2);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = a;
    m[(1, 1)] = a;
    m[(0, 2)] = b;
    m[(2, 0)] = b;
    m[(1, 3)] = b;
    m[(3, 1)] = b;
    m[(2, 2)] = c;
    m[(3, 3)] = c;
    m
}

pub fn is_symmetric_psd(m: &Matrix4<f64>) -> bool {
    if (m - m.transpose()).abs().max() > 1e-9 {
        return false;
    }
    m.symmetric_eigenvalues().iter().all(|e| *e >= -1e-9)
}

/// Constant-velocity predict followed by a position+velocity correction.
/// Held or invalid observations only predict.
pub fn track_update(
    track: &ObstacleTrack,
    obs: &Observation,
    dt: f64,
    step: u64,
    cfg: &TrackerConfig,
) -> (ObstacleTrack, TrackEvent) {
    let f = transition(dt);
    let mut x = f * track.state;
    let mut p = f * track.covariance * f.transpose() + process_cov(dt, cfg.process_noise);
    let mut event = TrackEvent::PredictedOnly;

    if let (Some((zp, zv)), false) = (obs.measurement, obs.held) {
        let z = Vector4::new(zp.x, zp.y, zv.x, zv.y);
        let r = cfg.measurement_cov();
        let s = p + r;
        if let Some(s_inv) = s.try_inverse() {
            let k = p * s_inv;
            x += k * (z - x);
            let i_k = Matrix4::identity() - k;
            p = i_k * p * i_k.transpose() + k * r * k.transpose();
        }
        event = TrackEvent::Corrected;
    }
    p = (p + p.transpose()) * 0.5;
    if !is_symmetric_psd(&p) || p.iter().any(|v| !v.is_finite()) {
        p = cfg.prior_cov();
        event = TrackEvent::Reset;
    }
    (
        ObstacleTrack {
            id: track.id,
            radius: track.radius,
            state: x,
            covariance: p,
            last_update_step: step,
        },
        event,
    )
}

/// `p(t + dt) = p + v dt`, velocity unchanged.
pub fn predict_one_step(track: &ObstacleTrack, dt: f64) -> PredictedObstacle {
    PredictedObstacle {
        id: track.id,
        position: track.position() + track.velocity() * dt,
        velocity: track.velocity(),
        radius: track.radius,
    }
}

/// The latest filtered state, unpropagated.
pub fn hold_latest(track: &ObstacleTrack) -> PredictedObstacle {
    PredictedObstacle {
        id: track.id,
        position: track.position(),
        velocity: track.velocity(),
        radius: track.radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::SeededStream;
    use crate::sim::Range;

    fn obs(id: usize, p: Vec2, v: Vec2) -> Observation {
        Observation {
            id,
            radius: 0.1,
            measurement: Some((p, v)),
            held: false,
        }
    }

    #[test]
    fn exact_profile_is_identity() {
        let profile = RandomizationProfile::exact();
        let mut rng = SeededStream::derive(3, &[]);
        let mut observer = Observer::new();
        let mut truth = RobotState::at(1.0, 2.0, 0.3);
        truth.velocity = Command::new(0.5, -0.1, 0.2);
        assert_eq!(observer.observe_robot(&truth, &mut rng, &profile), truth);
        let o = ObstacleDisk {
            position: Vec2::new(3.0, 1.0),
            velocity: Vec2::new(-2.0, 0.5),
            radius: 0.2,
        };
        let got = observer.observe_obstacles(&[(0, o)], &mut rng, &profile);
        assert_eq!(got[0].measurement, Some((o.position, o.velocity)));
        assert!(!got[0].held);
    }

    #[test]
    fn obstacle_noise_statistics() {
        let profile = RandomizationProfile {
            dropout_probability: 0.0,
            ..Default::default()
        };
        let mut rng = SeededStream::derive(4, &[]);
        let mut observer = Observer::new();
        let o = ObstacleDisk {
            position: Vec2::new(1.0, -1.0),
            velocity: Vec2::zeros(),
            radius: 0.2,
        };
        let n = 100_000;
        let mut sum = Vec2::zeros();
        for _ in 0..n {
            let m = observer.observe_obstacles(&[(0, o)], &mut rng, &profile)[0];
            let e = m.measurement.unwrap().0 - o.position;
            assert!(e.x.abs() <= 0.05 && e.y.abs() <= 0.05);
            sum += e;
        }
        let mean = sum / n as f64;
        assert!(mean.norm() < 1e-3, "{mean:?}");
    }

    #[test]
    fn dropout_holds_one_to_three_steps() {
        let profile = RandomizationProfile {
            dropout_probability: 0.3,
            ..Default::default()
        };
        let mut rng = SeededStream::derive(5, &[]);
        let mut observer = Observer::new();
        let mut last_fresh = None;
        let mut run = 0;
        let mut runs = Vec::new();
        for k in 0..5000 {
            let o = ObstacleDisk {
                position: Vec2::new(k as f64 * 0.01, 0.0),
                velocity: Vec2::new(0.5, 0.0),
                radius: 0.2,
            };
            let m = observer.observe_obstacles(&[(0, o)], &mut rng, &profile)[0];
            if m.held {
                assert_eq!(m.measurement, last_fresh);
                run += 1;
            } else {
                if run > 0 {
                    runs.push(run);
                }
                run = 0;
                last_fresh = m.measurement;
            }
        }
        assert!(!runs.is_empty());
        assert!(runs.iter().all(|r| (1..=3).contains(r)));
        for len in 1..=3 {
            assert!(runs.contains(&len));
        }
    }

    #[test]
    fn noiseless_tracking_is_exact() {
        let cfg = TrackerConfig::noiseless();
        let dt = 0.02;
        let v = Vec2::new(2.0, -1.0);
        let p0 = Vec2::new(0.5, 0.25);
        let mut track = ObstacleTrack::init(&obs(0, p0, v), 0, &cfg).unwrap();
        for k in 1..=100u64 {
            let truth_k = p0 + v * (k as f64 * dt);
            track = track_update(&track, &obs(0, truth_k, v), dt, k, &cfg).0;
            let pred = predict_one_step(&track, dt);
            let truth_next = p0 + v * ((k + 1) as f64 * dt);
            assert!((pred.position - truth_next).norm() <= 1e-9);
        }
    }

    #[test]
    fn dropout_grows_covariance() {
        let cfg = TrackerConfig::from_profile(&RandomizationProfile::default());
        let mut track = ObstacleTrack::init(&obs(0, Vec2::zeros(), Vec2::zeros()), 0, &cfg).unwrap();
        for k in 1..20 {
            track = track_update(&track, &obs(0, Vec2::zeros(), Vec2::zeros()), 0.02, k, &cfg).0;
        }
        let held = Observation {
            held: true,
            ..obs(0, Vec2::zeros(), Vec2::zeros())
        };
        let (next, ev) = track_update(&track, &held, 0.02, 20, &cfg);
        assert_eq!(ev, TrackEvent::PredictedOnly);
        assert!(next.covariance.trace() > track.covariance.trace());
    }

    #[test]
    fn filtering_reduces_noise_on_stationary_target() {
        let profile = RandomizationProfile {
            dropout_probability: 0.0,
            ..Default::default()
        };
        let cfg = TrackerConfig::from_profile(&profile);
        let truth = ObstacleDisk {
            position: Vec2::new(2.0, 1.0),
            velocity: Vec2::zeros(),
            radius: 0.2,
        };
        let runs = 200;
        let mut sq_err = 0.0;
        for r in 0..runs {
            let mut rng = SeededStream::derive(77, &[r]);
            let mut observer = Observer::new();
            let first = observer.observe_obstacles(&[(0, truth)], &mut rng, &profile)[0];
            let mut track = ObstacleTrack::init(&first, 0, &cfg).unwrap();
            for k in 1..200u64 {
                let m = observer.observe_obstacles(&[(0, truth)], &mut rng, &profile)[0];
                track = track_update(&track, &m, 0.02, k, &cfg).0;
            }
            sq_err += (track.position() - truth.position).norm_squared() / 2.0;
        }
        let rms_per_axis = (sq_err / runs as f64).sqrt();
        let raw_std = profile.obstacle_position_noise.uniform_std();
        assert!(rms_per_axis < raw_std, "{rms_per_axis} vs {raw_std}");
    }

    #[test]
    fn prediction_linearity() {
        let cfg = TrackerConfig::noiseless();
        let t = ObstacleTrack::init(&obs(1, Vec2::zeros(), Vec2::new(2.0, 0.0)), 0, &cfg).unwrap();
        assert_eq!(predict_one_step(&t, 0.02).position, Vec2::new(0.04, 0.0));
        let still = ObstacleTrack::init(&obs(1, Vec2::new(1.0, 1.0), Vec2::zeros()), 0, &cfg).unwrap();
        assert_eq!(predict_one_step(&still, 0.02).position, Vec2::new(1.0, 1.0));
        let half = predict_one_step(&t, 0.01);
        let mut t2 = t;
        t2.state = Vector4::new(half.position.x, half.position.y, half.velocity.x, half.velocity.y);
        let twice = predict_one_step(&t2, 0.01);
        assert!((twice.position - predict_one_step(&t, 0.02).position).norm() < 1e-15);
    }

    #[test]
    fn hold_latest_returns_filtered_position() {
        let cfg = TrackerConfig::noiseless();
        let t = ObstacleTrack::init(&obs(2, Vec2::new(3.0, -1.0), Vec2::new(-4.0, 0.0)), 7, &cfg).unwrap();
        let h = hold_latest(&t);
        assert_eq!(h.position, t.position());
        assert_eq!(h.velocity, t.velocity());
    }

    #[test]
    fn covariance_reset_on_corruption() {
        let cfg = TrackerConfig::from_profile(&RandomizationProfile::default());
        let mut t = ObstacleTrack::init(&obs(0, Vec2::zeros(), Vec2::zeros()), 0, &cfg).unwrap();
        t.covariance[(0, 0)] = -5.0;
        let held = Observation {
            held: true,
            ..obs(0, Vec2::zeros(), Vec2::zeros())
        };
        let (n, ev) = track_update(&t, &held, 0.02, 1, &cfg);
        assert_eq!(ev, TrackEvent::Reset);
        assert!(n.is_psd());
    }

    #[test]
    fn measurement_std_from_uniform_width() {
        let cfg = TrackerConfig::from_profile(&RandomizationProfile::default());
        assert!((cfg.position_std - 0.1 / 12f64.sqrt()).abs() < 1e-15);
        assert!((cfg.velocity_std - Range::symmetric(0.2).width() / 12f64.sqrt()).abs() < 1e-15);
    }
}
