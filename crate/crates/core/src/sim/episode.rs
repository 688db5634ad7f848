//! Closed-loop episode: sensing, planning, control, fusion, shielding and
//! base integration at the control rate.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controllers::{
    nav_command, nav_reward, reflex_command, reflex_reward, select_threat, NavContext, RewardBreakdown, Transition,
};
use crate::handoff::{fuse, handoff_rewards, hard_switch, HandoffState};
use crate::perception::{track_update, ObstacleTrack, Observer, PredictedObstacle, TrackerConfig};
use crate::planner::{Planner, PredictionMode};
use crate::seeding::{purpose, SeededStream};
use crate::shield::{build_safe_set, project_safe, ShieldStatus};
use crate::sim::scenario::{Scenario, Variant};
use crate::sim::{spawn_attack, step_obstacle, step_robot, LatencyBuffer, SimError, MAX_SPAWN_TRIES};
use crate::state::{wrap_angle, Command, RobotState, Vec2};
use crate::world::{phi_dyn, ObstacleDisk};

/// Why an episode ended. Exactly one per episode; checked in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StaticCollision,
    DynamicCollision,
    Fall,
    GoalReached,
    Horizon,
    /// A module failed; the message is kept on the log.
    Failure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::StaticCollision => "static_collision",
            Termination::DynamicCollision => "dynamic_collision",
            Termination::Fall => "fall",
            Termination::GoalReached => "goal_reached",
            Termination::Horizon => "horizon",
            Termination::Failure => "failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Termination::StaticCollision,
            Termination::DynamicCollision,
            Termination::Fall,
            Termination::GoalReached,
            Termination::Horizon,
            Termination::Failure,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One control step. Robot and obstacle quantities refer to the true state
/// after the step was integrated.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub state: RobotState,
    pub u_nav: Command,
    pub u_refl: Command,
    pub u_fuse: Command,
    pub u_safe: Command,
    /// Command applied to the base after the latency buffer.
    pub u_exec: Command,
    pub status: ShieldStatus,
    pub threat: f64,
    pub phi_env: f64,
    /// Smallest true dynamic clearance; infinite with no obstacle present.
    pub min_phi_dyn: f64,
    pub obstacles: usize,
    pub nav_reward: RewardBreakdown,
    pub reflex_reward: RewardBreakdown,
    pub handoff_reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub seed: u64,
    pub variant: Variant,
    pub start: RobotState,
    pub friction: f64,
    pub latency_steps: usize,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub failure: Option<String>,
    /// Travelled distance.
    pub l_act: f64,
    /// Static shortest distance from the start to the goal region.
    pub l_stat: f64,
    /// Initial distance to the goal center.
    pub d0: f64,
}

impl EpisodeLog {
    pub fn goal_reached(&self) -> bool {
        self.termination == Termination::GoalReached
    }

    pub fn static_collision(&self) -> bool {
        self.termination == Termination::StaticCollision
    }

    pub fn dynamic_collision(&self) -> bool {
        self.termination == Termination::DynamicCollision
    }

    /// Smallest dynamic clearance over the logged steps; `None` if no
    /// obstacle was ever present.
    pub fn d_min(&self) -> Option<f64> {
        let m = self.steps.iter().map(|s| s.min_phi_dyn).fold(f64::INFINITY, f64::min);
        m.is_finite().then_some(m)
    }

    /// `L_stat / L_act`, capped at one. `None` without motion.
    pub fn path_efficiency(&self) -> Option<f64> {
        (self.l_act > 0.0).then(|| (self.l_stat / self.l_act).min(1.0))
    }

    /// Writes the per-step trace as CSV.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(STEP_COLUMNS)?;
        for s in &self.steps {
            let mut row: Vec<String> = vec![
                s.step.to_string(),
                s.time.to_string(),
                s.state.x.to_string(),
                s.state.y.to_string(),
                s.state.theta.to_string(),
                s.state.velocity.vx.to_string(),
                s.state.velocity.vy.to_string(),
                s.state.velocity.omega.to_string(),
                s.state.tilt.x.to_string(),
                s.state.tilt.y.to_string(),
            ];
            for u in [s.u_nav, s.u_refl, s.u_fuse, s.u_safe, s.u_exec] {
                row.extend([u.vx.to_string(), u.vy.to_string(), u.omega.to_string()]);
            }
            row.extend([
                s.status.as_str().to_string(),
                s.threat.to_string(),
                s.phi_env.to_string(),
                s.min_phi_dyn.to_string(),
                s.obstacles.to_string(),
                s.nav_reward.total.to_string(),
                s.reflex_reward.total.to_string(),
                s.handoff_reward.total.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const STEP_COLUMNS: [&str; 33] = [
    "step", "time", "x", "y", "theta", "vx", "vy", "omega", "roll", "pitch", "u_nav_vx", "u_nav_vy", "u_nav_omega",
    "u_refl_vx", "u_refl_vy", "u_refl_omega", "u_fuse_vx", "u_fuse_vy", "u_fuse_omega", "u_safe_vx", "u_safe_vy",
    "u_safe_omega", "u_exec_vx", "u_exec_vy", "u_exec_omega", "shield_status", "threat", "phi_env", "min_phi_dyn",
    "obstacles", "r_nav", "r_refl", "r_handoff",
];

fn sample_start(scn: &Scenario, rng: &mut SeededStream) -> Result<RobotState, SimError> {
    let s = &scn.config.start;
    for _ in 0..MAX_SPAWN_TRIES {
        let x = s.center.x + rng.symmetric(s.half_extent.x);
        let y = s.center.y + rng.symmetric(s.half_extent.y);
        let theta = wrap_angle(s.heading + rng.symmetric(s.heading_spread));
        let p = Vec2::new(x, y);
        if scn.field.phi_env_at(p) > 0.0 && !scn.config.goal.contains(p) {
            return Ok(RobotState::at(x, y, theta));
        }
    }
    Err(SimError::SpawnRejected(MAX_SPAWN_TRIES))
}

struct LiveObstacle {
    id: usize,
    disk: ObstacleDisk,
}

fn empty_rewards() -> RewardBreakdown {
    RewardBreakdown::from_components(Vec::new())
}

/// Runs one episode. Module failures end the episode with
/// [`Termination::Failure`]; this function does not panic on them.
pub fn run_episode(scn: &Scenario, seed: u64) -> EpisodeLog {
    let cfg = &scn.config;
    let field = scn.field.as_ref();
    let geom = cfg.geometry;
    let dt = cfg.dt;

    let mut episode_rng = SeededStream::derive(seed, &[purpose::EPISODE]);
    let mut start_rng = SeededStream::derive(seed, &[purpose::START]);
    let spawn_root = SeededStream::derive(seed, &[purpose::SPAWN]);
    let mut spawn_time_rng = spawn_root.split(&[0]);
    let mut spawn_rng = spawn_root.split(&[1]);
    let mut perception_rng = SeededStream::derive(seed, &[purpose::PERCEPTION]);

    let friction = cfg.profile.friction_factor.sample(&mut episode_rng);
    let latency = cfg.profile.latency.sample(&mut episode_rng);
    let mut latency_buf = LatencyBuffer::new(latency, dt);

    let mut log = EpisodeLog {
        seed,
        variant: cfg.variant,
        start: RobotState::default(),
        friction,
        latency_steps: latency_buf.delay_steps(),
        steps: Vec::new(),
        termination: Termination::Failure,
        failure: None,
        l_act: 0.0,
        l_stat: 0.0,
        d0: 0.0,
    };
    let fail = |mut log: EpisodeLog, msg: String| {
        log.termination = Termination::Failure;
        log.failure = Some(msg);
        log
    };

    let mut robot = match sample_start(scn, &mut start_rng) {
        Ok(s) => s,
        Err(e) => return fail(log, format!("start: {e}")),
    };
    log.start = robot;
    log.d0 = (robot.position() - cfg.goal.center).norm();
    log.l_stat = match scn.cost_to_go.static_path_length(field, robot.position()) {
        Ok(l) => (l - cfg.goal.radius).max(f64::MIN_POSITIVE),
        Err(e) => return fail(log, format!("static path: {e}")),
    };

    let mut spawn_times: Vec<f64> = if cfg.attacks.spawn_times.is_empty() {
        (0..cfg.attacks.count).map(|_| cfg.attacks.spawn_window.sample(&mut spawn_time_rng)).collect()
    } else {
        cfg.attacks.spawn_times.clone()
    };
    spawn_times.sort_by(f64::total_cmp);
    let mut next_spawn = 0usize;

    let tracker = TrackerConfig::from_profile(&cfg.profile);
    let mode = if cfg.variant == Variant::NoPred {
        PredictionMode::HoldLatest
    } else {
        PredictionMode::Predict
    };
    let shield_on = cfg.shield.enabled && cfg.variant != Variant::NoCbf;
    let mut observer = Observer::new();
    let mut tracks: Vec<ObstacleTrack> = Vec::new();
    let mut obstacles: Vec<LiveObstacle> = Vec::new();
    let mut planner = Planner::new(cfg.planner);
    let mut handoff = HandoffState::default();
    let total_steps = (cfg.horizon / dt - 1e-9).ceil().max(1.0) as u64;

    for k in 0..total_steps {
        let t = k as f64 * dt;
        while next_spawn < spawn_times.len() && spawn_times[next_spawn] <= t + 1e-12 {
            match spawn_attack(
                &mut spawn_rng,
                &cfg.profile,
                &robot,
                &geom,
                &cfg.attacks.radii,
                cfg.attacks.mode,
                cfg.attacks.min_distance,
            ) {
                Ok(disk) => obstacles.push(LiveObstacle { id: next_spawn, disk }),
                Err(e) => return fail(log, format!("spawn at t = {t}: {e}")),
            }
            next_spawn += 1;
        }

        let sensed = observer.observe_robot(&robot, &mut perception_rng, &cfg.profile);
        if k % cfg.perception_period_steps == 0 {
            let truth: Vec<(usize, ObstacleDisk)> = obstacles.iter().map(|o| (o.id, o.disk)).collect();
            let observations = observer.observe_obstacles(&truth, &mut perception_rng, &cfg.profile);
            tracks.retain(|tr| obstacles.iter().any(|o| o.id == tr.id));
            for obs in &observations {
                match tracks.iter_mut().find(|tr| tr.id == obs.id) {
                    Some(tr) => {
                        let gap = (k - tr.last_update_step) as f64 * dt;
                        *tr = track_update(tr, obs, gap, k, &tracker).0;
                    }
                    None => {
                        if let Some(tr) = ObstacleTrack::init(obs, k, &tracker) {
                            tracks.push(tr);
                        }
                    }
                }
            }
        }

        let plan = planner.tick(k, dt, &sensed, &tracks, mode, field, &scn.cost_to_go, &geom);
        let ctx = NavContext {
            phi_env: field.phi_env_at(sensed.position()),
            roughness: scn.map.roughness_at(sensed.position()),
        };
        let u_nav = match &plan.path {
            Some(path) => nav_command(&sensed, path, &cfg.goal, ctx, &cfg.nav),
            None => Command::ZERO,
        };
        let selected = select_threat(&sensed, &plan.predictions, &geom);
        let threat_obs: Option<&PredictedObstacle> = selected.map(|i| &plan.predictions[i]);
        let u_refl = match threat_obs {
            Some(o) => reflex_command(&sensed, o, field, &geom, &cfg.reflex),
            None => Command::ZERO,
        };
        let threat = plan.threat.value;
        let prev_fuse = handoff.previous;
        let u_fuse = if cfg.variant == Variant::HardHandoff {
            let u = hard_switch(u_nav, u_refl, threat, cfg.handoff.switch_threshold);
            handoff.previous = u;
            u
        } else {
            let (u, st) = fuse(u_nav, u_refl, threat, handoff, &cfg.handoff);
            handoff = st;
            u
        };
        let (u_safe, status) = if shield_on {
            let set = build_safe_set(
                &sensed,
                field,
                &plan.predictions,
                selected,
                &geom,
                cfg.base.command_box,
                &cfg.shield,
            );
            project_safe(u_fuse, &set)
        } else {
            (u_fuse, ShieldStatus::Disabled)
        };
        let u_exec = latency_buf.push(u_safe);

        let roughness = scn.map.roughness_at(robot.position());
        let next = match step_robot(&robot, u_exec, dt, &cfg.base, friction, roughness) {
            Ok(s) => s,
            Err(e) => return fail(log, format!("step {k}: {e}")),
        };
        for o in obstacles.iter_mut() {
            o.disk = step_obstacle(&o.disk, dt, cfg.attacks.mode);
        }
        let p = next.position();
        obstacles.retain(|o| {
            let rel = o.disk.position - p;
            rel.norm() <= cfg.attacks.despawn_distance || rel.dot(&o.disk.velocity) <= 0.0
        });

        let transition = Transition {
            before: &robot,
            after: &next,
            command: u_exec,
            dt,
        };
        let nav_r = match &plan.path {
            Some(path) => nav_reward(&transition, path, &cfg.rewards, &cfg.base),
            None => empty_rewards(),
        };
        let refl_r = reflex_reward(&transition, threat_obs, &cfg.rewards, &geom, &cfg.base);
        let hand_r = handoff_rewards(u_fuse, u_nav, u_refl, threat, u_fuse.sub(prev_fuse), next.tilt, &cfg.handoff);

        log.l_act += (p - robot.position()).norm();
        let phi_env = field.phi_env_at(p);
        let min_phi_dyn = obstacles.iter().map(|o| phi_dyn(p, &o.disk, &geom)).fold(f64::INFINITY, f64::min);
        let hit = obstacles.iter().any(|o| (p - o.disk.position).norm() <= geom.contact_radius(o.disk.radius));
        robot = next;
        log.steps.push(StepRecord {
            step: k,
            time: (k + 1) as f64 * dt,
            state: robot,
            u_nav,
            u_refl,
            u_fuse,
            u_safe,
            u_exec,
            status,
            threat,
            phi_env,
            min_phi_dyn,
            obstacles: obstacles.len(),
            nav_reward: nav_r,
            reflex_reward: refl_r,
            handoff_reward: hand_r,
        });

        let termination = if phi_env <= 0.0 {
            Some(Termination::StaticCollision)
        } else if hit {
            Some(Termination::DynamicCollision)
        } else if cfg.base.fallen(&robot) {
            Some(Termination::Fall)
        } else if cfg.goal.contains(p) {
            Some(Termination::GoalReached)
        } else if k + 1 == total_steps {
            Some(Termination::Horizon)
        } else {
            None
        };
        if let Some(reason) = termination {
            log.termination = reason;
            return log;
        }
    }
    log.termination = Termination::Horizon;
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::Goal;
    use crate::sim::scenario::ScenarioConfig;
    use crate::sim::{AttackMode, RandomizationProfile};
    use crate::world::GridMap2p5D;

    fn open_scenario() -> Scenario {
        let map = GridMap2p5D::free(Vec2::zeros(), 0.1, 61, 41).unwrap();
        let goal = Goal {
            center: Vec2::new(4.5, 2.0),
            radius: 0.3,
        };
        let cfg = ScenarioConfig::basic("inline", Vec2::new(1.5, 2.0), 0.0, goal, 10.0);
        Scenario::from_parts(cfg, map).unwrap()
    }

    #[test]
    fn open_map_reaches_goal() {
        let scn = open_scenario();
        let log = run_episode(&scn, 7);
        assert_eq!(log.termination, Termination::GoalReached, "{:?}", log.failure);
        let end = log.steps.last().unwrap().state.position();
        assert!(scn.config.goal.contains(end));
        assert!(log.path_efficiency().unwrap() > 0.9);
        assert_eq!(log.d_min(), None);
    }

    #[test]
    fn same_seed_same_log() {
        let mut scn = open_scenario();
        scn.config.attacks.count = 2;
        scn.config.attacks.spawn_times = vec![0.5, 1.0];
        let a = run_episode(&scn, 11);
        let b = run_episode(&scn, 11);
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_steps_csv(&mut ca).unwrap();
        b.write_steps_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn no_cbf_bypasses_shield() {
        let mut scn = open_scenario().with_variant(Variant::NoCbf);
        scn.config.attacks.count = 2;
        scn.config.attacks.spawn_times = vec![0.2, 0.8];
        let log = run_episode(&scn, 3);
        assert!(log.steps.iter().all(|s| s.u_safe == s.u_fuse && s.status == ShieldStatus::Disabled));
    }

    #[test]
    fn exact_profile_executes_without_latency() {
        let mut scn = open_scenario();
        scn.config.profile = RandomizationProfile::exact();
        let log = run_episode(&scn, 5);
        assert_eq!(log.latency_steps, 0);
        assert!(log.steps.iter().all(|s| s.u_exec == s.u_safe));
    }

    #[test]
    fn attack_is_logged_and_terminates_once() {
        let mut scn = open_scenario();
        scn.config.attacks.count = 3;
        scn.config.attacks.spawn_times = vec![0.0, 0.5, 1.0];
        scn.config.attacks.mode = AttackMode::Aimed;
        for seed in 0..20 {
            let log = run_episode(&scn, seed);
            assert!(log.failure.is_none());
            assert!(log.d_min().is_some());
            let last = log.steps.last().unwrap();
            match log.termination {
                Termination::GoalReached => assert!(scn.config.goal.contains(last.state.position())),
                Termination::DynamicCollision => assert!(last.min_phi_dyn <= -scn.config.geometry.margin + 1e-12),
                _ => {}
            }
        }
    }
}
