// Runs one seeded episode of the coupled scenario and writes its per-step
// log as CSV.

use safeloco::harness::{episode_seed, summarize};
use safeloco::layouts::{coupled_config, coupled_map};
use safeloco::sim::episode::run_episode;
use safeloco::sim::scenario::Scenario;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let scn = Scenario::from_parts(coupled_config(), coupled_map())?;
    let log = run_episode(&scn, episode_seed(0, 0, 0));
    let s = summarize(&log, &scn);
    println!(
        "seed {:016x}  steps {}  {}  L_act {:.2}  L_stat {:.2}  d_min {:?}",
        log.seed,
        log.steps.len(),
        log.termination.as_str(),
        s.l_act,
        s.l_stat,
        s.d_min
    );
    let mut csv = Vec::new();
    log.write_steps_csv(&mut csv)?;
    let text = String::from_utf8(csv)?;
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
