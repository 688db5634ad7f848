// Runs all four variants on shared seeds, prints the metric table and the
// paired bootstrap gaps, and writes the report files.
//
// cargo run --release --example ablation_benchmark -- [EPISODES] [OUT_DIR]

use std::path::PathBuf;

use safeloco::harness::{emit_report, run_benchmark, BenchmarkSpec, ReportFormat};
use safeloco::layouts::{coupled_config, coupled_map};
use safeloco::sim::scenario::{Scenario, Variant};

pub fn benchmark(episodes: usize, out: Option<PathBuf>) -> Result<(), Box<dyn std::error::Error>> {
    let scn = Scenario::from_parts(coupled_config(), coupled_map())?;
    let mut spec = BenchmarkSpec::new(vec![scn], Variant::ALL.to_vec(), episodes, 1);
    spec.bootstrap_resamples = 2000;
    let r = run_benchmark(&spec)?;
    for v in &r.variants {
        let m = &v.report;
        println!(
            "{:<13} GCR {:.3}  ASR {:.3}  TSR {:.3}  PE {}  d_min {}",
            v.variant.as_str(),
            m.gcr.mean,
            m.asr.mean,
            m.tsr.mean,
            m.pe.map_or("-".into(), |s| format!("{:.3}", s.mean)),
            m.d_min.map_or("-".into(), |s| format!("{:.3}", s.mean)),
        );
    }
    for g in &r.gaps {
        println!("{} - {} {:>5}: {:+.4} [{:+.4}, {:+.4}]", g.a, g.b, g.metric.as_str(), g.estimate, g.lo, g.hi);
    }
    if let Some(out) = out {
        let files = emit_report(&r, &out, ReportFormat::Csv)?;
        println!("wrote {}", files.summary.display());
    }
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    benchmark(8, None)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    benchmark(episodes, args.next().map(PathBuf::from))
}
