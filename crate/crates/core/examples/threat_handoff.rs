// Rate-limited threat-aware fusion against a discrete switch while the
// threat score ramps up and back down.

use safeloco::handoff::{fuse, hard_switch, threat_gate, HandoffConfig, HandoffState};
use safeloco::Command;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = HandoffConfig::default();
    cfg.validate()?;
    let u_nav = Command::new(1.0, 0.0, 0.3);
    let u_refl = Command::new(-0.8, 1.0, 0.0);
    let mut state = HandoffState::default();
    let mut prev_hard = u_nav;
    println!("{:>5} {:>5} {:>5} {:>22} {:>8} {:>8}", "step", "T", "gate", "fused", "|du|inf", "hard du");
    for k in 0..40 {
        let t = if k < 20 { k as f64 / 19.0 } else { (39 - k) as f64 / 19.0 };
        let (u, next) = fuse(u_nav, u_refl, t, state, &cfg);
        let du = u.sub(state.previous).norm_inf();
        state = next;
        let hard = hard_switch(u_nav, u_refl, t, cfg.switch_threshold);
        let hard_du = hard.sub(prev_hard).norm_inf();
        prev_hard = hard;
        if k % 4 == 0 || hard_du > 0.0 {
            println!(
                "{k:5} {t:5.2} {:5.2} ({:+.2},{:+.2},{:+.2}) {du:8.3} {hard_du:8.3}",
                threat_gate(t, &cfg),
                u.vx,
                u.vy,
                u.omega
            );
        }
    }
    println!("rate limit {:.2}", cfg.max_rate());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
