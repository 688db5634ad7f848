//! Threat-gated blending of navigation and reflex commands.

use serde::{Deserialize, Serialize};

use crate::controllers::RewardBreakdown;
use crate::state::{Command, Vec2};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HandoffError {
    #[error("gate thresholds must satisfy 0 <= lo < hi <= 1 (got {0}, {1})")]
    Thresholds(f64, f64),
    #[error("rate limits and smoothing constant must be positive")]
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoffConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Largest per-step change of each fused command component.
    pub rate_limits: Command,
    pub alpha_nav: f64,
    pub alpha_refl: f64,
    pub alpha_smooth: f64,
    pub alpha_rp_stab: f64,
    pub epsilon: f64,
    /// Threshold for the discrete switching baseline (`>=` selects reflex).
    pub switch_threshold: f64,
}

impl Default for HandoffConfig {
    fn default() -> Self {
        Self {
            t_lo: 0.1,
            t_hi: 0.5,
            rate_limits: Command::new(0.3, 0.3, 0.6),
            alpha_nav: 1.0,
            alpha_refl: 1.0,
            alpha_smooth: 0.05,
            alpha_rp_stab: 1.0,
            epsilon: 1e-3,
            switch_threshold: 0.5,
        }
    }
}

impl HandoffConfig {
    pub fn validate(&self) -> Result<(), HandoffError> {
        if !(0.0 <= self.t_lo && self.t_lo < self.t_hi && self.t_hi <= 1.0) {
            return Err(HandoffError::Thresholds(self.t_lo, self.t_hi));
        }
        let r = self.rate_limits;
        if !(r.vx > 0.0 && r.vy > 0.0 && r.omega > 0.0 && self.epsilon > 0.0) {
            return Err(HandoffError::NonPositive);
        }
        Ok(())
    }

    pub fn max_rate(&self) -> f64 {
        self.rate_limits.norm_inf()
    }
}

/// Previous fused command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandoffState {
    pub previous: Command,
}

/// Smoothstep gate between the two thresholds.
pub fn threat_gate(t: f64, cfg: &HandoffConfig) -> f64 {
    if t <= cfg.t_lo {
        return 0.0;
    }
    if t >= cfg.t_hi {
        return 1.0;
    }
    let s = (t - cfg.t_lo) / (cfg.t_hi - cfg.t_lo);
    3.0 * s * s - 2.0 * s * s * s
}

fn limit(target: f64, previous: f64, rate: f64) -> f64 {
    target.clamp(previous - rate, previous + rate)
}

/// Convex blend followed by a per-axis rate limit relative to the previous
/// fused command.
pub fn fuse(u_nav: Command, u_refl: Command, t: f64, state: HandoffState, cfg: &HandoffConfig) -> (Command, HandoffState) {
    let g = threat_gate(t, cfg);
    let raw = if g == 0.0 {
        u_nav
    } else if g == 1.0 {
        u_refl
    } else {
        u_nav.scale(1.0 - g).add(u_refl.scale(g))
    };
    let p = state.previous;
    let r = cfg.rate_limits;
    let u = Command::new(
        limit(raw.vx, p.vx, r.vx),
        limit(raw.vy, p.vy, r.vy),
        limit(raw.omega, p.omega, r.omega),
    );
    (u, HandoffState { previous: u })
}

/// Discrete switching with no rate limit.
pub fn hard_switch(u_nav: Command, u_refl: Command, t: f64, threshold: f64) -> Command {
    if t >= threshold {
        u_refl
    } else {
        u_nav
    }
}

pub fn handoff_rewards(
    u_fuse: Command,
    u_nav: Command,
    u_refl: Command,
    t: f64,
    delta_fuse: Command,
    tilt: Vec2,
    cfg: &HandoffConfig,
) -> RewardBreakdown {
    let g = threat_gate(t, cfg);
    let coord = (1.0 - g) * (-cfg.alpha_nav * u_fuse.sub(u_nav).norm().powi(2)).exp()
        + g * (-cfg.alpha_refl * u_fuse.sub(u_refl).norm().powi(2)).exp();
    let smooth = (cfg.alpha_smooth / (delta_fuse.norm() + cfg.epsilon)).tanh();
    let stable = (-cfg.alpha_rp_stab * tilt.norm_squared()).exp();
    RewardBreakdown::from_components(vec![("coord", coord), ("smooth", smooth), ("stable", stable)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_big_rates() -> HandoffConfig {
        HandoffConfig {
            rate_limits: Command::new(1e9, 1e9, 1e9),
            ..Default::default()
        }
    }

    #[test]
    fn gate_examples() {
        let cfg = HandoffConfig::default();
        assert_eq!(threat_gate(0.0, &cfg), 0.0);
        assert_eq!(threat_gate(1.0, &cfg), 1.0);
        let mid = HandoffConfig {
            t_lo: 0.2,
            t_hi: 0.6,
            ..Default::default()
        };
        assert!((threat_gate(0.4, &mid) - 0.5).abs() < 1e-12);
        assert_eq!(threat_gate(0.2, &mid), 0.0);
        assert_eq!(threat_gate(0.6, &mid), 1.0);
    }

    #[test]
    fn gate_monotone_on_grid() {
        let cfg = HandoffConfig::default();
        let mut prev = threat_gate(0.0, &cfg);
        for k in 1..=1000 {
            let g = threat_gate(k as f64 / 1000.0, &cfg);
            assert!(g >= prev);
            assert!((0.0..=1.0).contains(&g));
            prev = g;
        }
    }

    #[test]
    fn fuse_examples() {
        let cfg = HandoffConfig::default();
        let nav = Command::new(1.0, 0.2, 0.3);
        let refl = Command::new(-1.0, 0.8, 0.0);
        let (u, s) = fuse(nav, refl, 0.0, HandoffState { previous: nav }, &cfg);
        assert_eq!(u, nav);
        assert_eq!(s.previous, nav);
        let (u, _) = fuse(nav, refl, 1.0, HandoffState { previous: refl }, &cfg);
        assert_eq!(u, refl);

        let half = HandoffConfig {
            t_lo: 0.2,
            t_hi: 0.6,
            ..cfg_big_rates()
        };
        let (u, _) = fuse(
            Command::new(1.0, 0.0, 0.0),
            Command::new(0.0, 1.0, 0.0),
            0.4,
            HandoffState::default(),
            &half,
        );
        assert!((u.vx - 0.5).abs() < 1e-12 && (u.vy - 0.5).abs() < 1e-12 && u.omega == 0.0);
    }

    #[test]
    fn fuse_respects_rate_limit() {
        let cfg = HandoffConfig::default();
        let nav = Command::new(1.0, 0.0, 1.0);
        let refl = Command::new(-1.5, 1.0, -2.0);
        let mut state = HandoffState::default();
        for k in 0..200 {
            let t = if (k / 7) % 2 == 0 { 0.0 } else { 1.0 };
            let prev = state.previous;
            let (u, s) = fuse(nav, refl, t, state, &cfg);
            let d = u.sub(prev);
            assert!(d.vx.abs() <= 0.3 + 1e-12 && d.vy.abs() <= 0.3 + 1e-12 && d.omega.abs() <= 0.6 + 1e-12);
            state = s;
        }
    }

    #[test]
    fn fuse_continuous_in_threat() {
        let cfg = cfg_big_rates();
        let nav = Command::new(1.0, 0.0, 0.5);
        let refl = Command::new(-1.0, 1.0, 0.0);
        let mut prev = fuse(nav, refl, 0.0, HandoffState::default(), &cfg).0;
        for k in 1..=1000 {
            let u = fuse(nav, refl, k as f64 * 1e-3, HandoffState::default(), &cfg).0;
            // smoothstep slope is at most 1.5 / (hi - lo)
            let bound = 1.5 / (cfg.t_hi - cfg.t_lo) * 1e-3 * 2.0 + 1e-12;
            assert!(u.sub(prev).norm_inf() <= bound);
            prev = u;
        }
    }

    #[test]
    fn agreement_makes_gate_irrelevant() {
        let cfg = cfg_big_rates();
        let u0 = Command::new(0.4, -0.3, 0.9);
        for k in 0..=100 {
            let (u, _) = fuse(u0, u0, k as f64 / 100.0, HandoffState::default(), &cfg);
            assert!(u.sub(u0).norm_inf() < 1e-12);
        }
    }

    #[test]
    fn hard_switch_boundary() {
        let nav = Command::new(1.0, 0.0, 0.0);
        let refl = Command::new(0.0, 1.0, 0.0);
        assert_eq!(hard_switch(nav, refl, 0.49, 0.5), nav);
        assert_eq!(hard_switch(nav, refl, 0.5, 0.5), refl);
        let seq: Vec<Command> = [0.1, 0.9, 0.1, 0.9].iter().map(|&t| hard_switch(nav, refl, t, 0.5)).collect();
        assert!(seq.windows(2).all(|w| w[1].sub(w[0]).norm_inf() == 1.0));
    }

    #[test]
    fn reward_examples() {
        let cfg = HandoffConfig::default();
        let nav = Command::new(1.0, 0.0, 0.0);
        let refl = Command::new(0.0, 1.0, 0.0);
        let r = handoff_rewards(nav, nav, refl, 0.0, Command::ZERO, Vec2::zeros(), &cfg);
        assert_eq!(r.get("coord"), Some(1.0));
        assert!((r.get("smooth").unwrap() - (0.05f64 / 1e-3).tanh()).abs() < 1e-15);
        assert_eq!(r.get("stable"), Some(1.0));
        let tilt = Vec2::new(0.1, 0.2);
        let r = handoff_rewards(nav, nav, refl, 0.0, Command::new(0.1, 0.0, 0.0), tilt, &cfg);
        assert!((r.get("smooth").unwrap() - (0.05f64 / 0.101).tanh()).abs() < 1e-12);
        assert!((r.get("stable").unwrap() - (-0.05f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(HandoffConfig::default().validate().is_ok());
        let bad = HandoffConfig {
            t_lo: 0.6,
            t_hi: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HandoffConfig {
            rate_limits: Command::new(0.0, 1.0, 1.0),
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(HandoffError::NonPositive));
    }
}
