use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use safeloco::harness::{emit_report, run_benchmark, BenchmarkSpec, ReportFormat};
use safeloco::sim::scenario::{Scenario, Variant};

/// Runs a Monte-Carlo batch of one or more scenarios and writes the report.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Scenario file (repeatable).
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Ablation variant (repeatable); all four when omitted.
    #[arg(long)]
    variant: Vec<Variant>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the control period of every scenario.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Worker threads; 1 runs serially.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Keep per-step traces of the first N episodes.
    #[arg(long, default_value_t = 0)]
    trace_episodes: usize,
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let mut scenarios = Vec::new();
    for path in &args.scenario {
        let mut s = Scenario::load(path)?;
        if let Some(dt) = args.dt {
            s.config.dt = dt;
            s.config.validate()?;
        }
        scenarios.push(s);
    }
    let variants = if args.variant.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variant.clone()
    };
    let mut spec = BenchmarkSpec::new(scenarios, variants, args.episodes, args.seed);
    spec.parallel = args.parallel;
    spec.trace_episodes = args.trace_episodes;
    let result = run_benchmark(&spec)?;
    let files = emit_report(&result, &args.out, args.format)?;
    println!("{:<13} {:>6} {:>6} {:>6} {:>7} {:>7}", "variant", "GCR", "ASR", "TSR", "PE", "d_min");
    for v in &result.variants {
        let r = &v.report;
        let opt = |m: Option<f64>| m.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<13} {:>6.3} {:>6.3} {:>6.3} {:>7} {:>7}",
            v.variant.as_str(),
            r.gcr.mean,
            r.asr.mean,
            r.tsr.mean,
            opt(r.pe.map(|s| s.mean)),
            opt(r.d_min.map(|s| s.mean)),
        );
    }
    println!("wrote {}", files.summary.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
