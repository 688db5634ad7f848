//! Batch evaluation: per-episode summaries, metrics, shared-seed variant
//! comparison with bootstrap intervals, and CSV reports.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seeding::{derive_seed, purpose, SeededStream, RNG_ALGORITHM};
use crate::shield::ShieldStatus;
use crate::sim::episode::{run_episode, EpisodeLog, Termination};
use crate::sim::scenario::{LcWeights, Scenario, Variant};
use crate::state::Command;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no episodes to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: bad value `{value}` in column {column}")]
    Parse {
        path: PathBuf,
        column: &'static str,
        value: String,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Step statistics that are not part of the episode CSV.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeDiagnostics {
    /// Largest per-step fused command change, per axis.
    pub max_fuse_delta: Command,
    /// Steps where the threat crossed the switching threshold upward.
    pub onset_steps: u32,
    /// Onset steps whose fused command change broke the rate limit.
    pub onset_violations: u32,
    /// Steps whose shield status was not passthrough/filtered/disabled.
    pub infeasible_steps: u32,
}

/// One row of the per-episode report.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub variant: Variant,
    pub goal: bool,
    pub static_collision: bool,
    pub dynamic_collision: bool,
    pub termination: Termination,
    pub l_act: f64,
    pub l_stat: f64,
    pub pe: Option<f64>,
    pub d_min: Option<f64>,
    pub lc: f64,
    pub diagnostics: EpisodeDiagnostics,
}

impl EpisodeSummary {
    pub fn avoided(&self) -> bool {
        !self.dynamic_collision
    }

    /// Goal reached without any collision.
    pub fn success(&self) -> bool {
        self.goal && !self.static_collision && self.avoided()
    }
}

/// Locomotion cost: mean over steps of normalized goal distance, squared
/// tilt and squared executed-command change.
pub fn locomotion_cost(log: &EpisodeLog, goal_center: crate::state::Vec2, w: &LcWeights) -> f64 {
    if log.steps.is_empty() {
        return 0.0;
    }
    let d0 = if log.d0 > 0.0 { log.d0 } else { 1.0 };
    let mut prev = Command::ZERO;
    let mut sum = 0.0;
    for s in &log.steps {
        let dg = (s.state.position() - goal_center).norm();
        let du = s.u_exec.sub(prev).norm();
        sum += w.goal * dg / d0
            + w.tilt * s.state.tilt.norm_squared() / (w.tilt_scale * w.tilt_scale)
            + w.command * du * du / (w.command_scale * w.command_scale);
        prev = s.u_exec;
    }
    sum / log.steps.len() as f64
}

pub fn diagnostics(log: &EpisodeLog, rate_limits: Command, switch_threshold: f64) -> EpisodeDiagnostics {
    let mut d = EpisodeDiagnostics::default();
    let mut prev_u = Command::ZERO;
    let mut prev_t = 0.0;
    for s in &log.steps {
        let du = s.u_fuse.sub(prev_u);
        let m = &mut d.max_fuse_delta;
        m.vx = m.vx.max(du.vx.abs());
        m.vy = m.vy.max(du.vy.abs());
        m.omega = m.omega.max(du.omega.abs());
        if prev_t < switch_threshold && s.threat >= switch_threshold {
            d.onset_steps += 1;
            if exceeds(du, rate_limits) {
                d.onset_violations += 1;
            }
        }
        if matches!(s.status, ShieldStatus::Relaxed | ShieldStatus::Emergency) {
            d.infeasible_steps += 1;
        }
        prev_u = s.u_fuse;
        prev_t = s.threat;
    }
    d
}

/// Some axis moved by more than its limit.
pub fn exceeds(du: Command, limits: Command) -> bool {
    const TOL: f64 = 1e-12;
    du.vx.abs() > limits.vx + TOL || du.vy.abs() > limits.vy + TOL || du.omega.abs() > limits.omega + TOL
}

pub fn summarize(log: &EpisodeLog, scn: &Scenario) -> EpisodeSummary {
    let cfg = &scn.config;
    EpisodeSummary {
        seed: log.seed,
        variant: log.variant,
        goal: log.goal_reached(),
        static_collision: log.static_collision(),
        dynamic_collision: log.dynamic_collision(),
        termination: log.termination,
        l_act: log.l_act,
        l_stat: log.l_stat,
        pe: log.path_efficiency(),
        d_min: log.d_min(),
        lc: locomotion_cost(log, cfg.goal.center, &cfg.lc),
        diagnostics: diagnostics(log, cfg.handoff.rate_limits, cfg.handoff.switch_threshold),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MetricStat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub episodes: usize,
    pub successes: usize,
    pub gcr: MetricStat,
    pub asr: MetricStat,
    pub tsr: MetricStat,
    /// Averaged over successful episodes; absent when there are none.
    pub pe: Option<MetricStat>,
    pub d_min: Option<MetricStat>,
    pub lc: Option<MetricStat>,
}

fn rate(flags: impl Iterator<Item = bool>) -> MetricStat {
    let v: Vec<f64> = flags.map(|b| if b { 1.0 } else { 0.0 }).collect();
    MetricStat::of(&v).expect("non-empty batch")
}

pub fn compute_metrics(batch: &[EpisodeSummary], variant: &str) -> Result<MetricsReport, HarnessError> {
    if batch.is_empty() {
        return Err(HarnessError::Empty);
    }
    let ok: Vec<&EpisodeSummary> = batch.iter().filter(|e| e.success()).collect();
    let pe: Vec<f64> = ok.iter().filter_map(|e| e.pe).collect();
    let dm: Vec<f64> = ok.iter().filter_map(|e| e.d_min).collect();
    let lc: Vec<f64> = ok.iter().map(|e| e.lc).collect();
    Ok(MetricsReport {
        variant: variant.to_string(),
        episodes: batch.len(),
        successes: ok.len(),
        gcr: rate(batch.iter().map(|e| e.goal && !e.static_collision)),
        asr: rate(batch.iter().map(|e| e.avoided())),
        tsr: rate(batch.iter().map(|e| e.success())),
        pe: MetricStat::of(&pe),
        d_min: MetricStat::of(&dm),
        lc: MetricStat::of(&lc),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Gcr,
    Asr,
    Tsr,
    Pe,
    DMin,
    Lc,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Gcr, Metric::Asr, Metric::Tsr, Metric::Pe, Metric::DMin, Metric::Lc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Gcr => "gcr",
            Metric::Asr => "asr",
            Metric::Tsr => "tsr",
            Metric::Pe => "pe",
            Metric::DMin => "d_min",
            Metric::Lc => "lc",
        }
    }

    /// Batch value of the metric over the episodes picked by `idx`.
    pub fn eval(self, batch: &[EpisodeSummary], idx: impl Iterator<Item = usize>) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for i in idx {
            let e = &batch[i];
            let v = match self {
                Metric::Gcr => Some(f64::from(u8::from(e.goal && !e.static_collision))),
                Metric::Asr => Some(f64::from(u8::from(e.avoided()))),
                Metric::Tsr => Some(f64::from(u8::from(e.success()))),
                Metric::Pe => e.pe.filter(|_| e.success()),
                Metric::DMin => e.d_min.filter(|_| e.success()),
                Metric::Lc => e.success().then_some(e.lc),
            };
            if let Some(v) = v {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Difference `a - b` of one metric between two variants on shared seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub a: Variant,
    pub b: Variant,
    pub metric: Metric,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

impl GapEstimate {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Paired percentile bootstrap: seed indices are resampled jointly for both
/// variants. `a[i]` and `b[i]` must come from the same seed.
pub fn bootstrap_gap(
    a: &[EpisodeSummary],
    b: &[EpisodeSummary],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Option<GapEstimate> {
    let n = a.len();
    if n == 0 || n != b.len() || resamples == 0 {
        return None;
    }
    let estimate = metric.eval(a, 0..n)? - metric.eval(b, 0..n)?;
    let mut rng = SeededStream::derive(seed, &[purpose::BOOTSTRAP, metric as u64]);
    let mut gaps = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for v in idx.iter_mut() {
            *v = rng.index(n);
        }
        if let (Some(x), Some(y)) = (metric.eval(a, idx.iter().copied()), metric.eval(b, idx.iter().copied())) {
            gaps.push(x - y);
        }
    }
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len();
    let lo = gaps[((0.025 * m as f64).floor() as usize).min(m - 1)];
    let hi = gaps[((0.975 * m as f64).ceil() as usize).saturating_sub(1).min(m - 1)];
    Some(GapEstimate {
        a: a[0].variant,
        b: b[0].variant,
        metric,
        estimate,
        lo,
        hi,
        resamples: m,
    })
}

/// What to run.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub scenarios: Vec<Scenario>,
    pub variants: Vec<Variant>,
    pub episodes: usize,
    pub master_seed: u64,
    /// Worker threads; 0 or 1 runs serially.
    pub parallel: usize,
    /// Episodes (by index, per scenario) whose full logs are kept.
    pub trace_episodes: usize,
    pub bootstrap_resamples: usize,
}

impl BenchmarkSpec {
    pub fn new(scenarios: Vec<Scenario>, variants: Vec<Variant>, episodes: usize, master_seed: u64) -> Self {
        Self {
            scenarios,
            variants,
            episodes,
            master_seed,
            parallel: 0,
            trace_episodes: 0,
            bootstrap_resamples: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub episodes: Vec<EpisodeSummary>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub master_seed: u64,
    pub variants: Vec<VariantResult>,
    /// Gaps of the first variant against each other one.
    pub gaps: Vec<GapEstimate>,
    pub traces: Vec<EpisodeLog>,
}

impl BenchmarkResult {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn gap(&self, a: Variant, b: Variant, metric: Metric) -> Option<&GapEstimate> {
        self.gaps.iter().find(|g| g.a == a && g.b == b && g.metric == metric)
    }
}

/// Seed of episode `index` of scenario `scenario`; shared by all variants.
pub fn episode_seed(master: u64, scenario: usize, index: usize) -> u64 {
    derive_seed(master, &[purpose::EPISODE, scenario as u64, index as u64])
}

pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult, HarnessError> {
    if spec.scenarios.is_empty() || spec.variants.is_empty() || spec.episodes == 0 {
        return Err(HarnessError::Empty);
    }
    let jobs: Vec<(usize, usize)> = (0..spec.scenarios.len())
        .flat_map(|s| (0..spec.episodes).map(move |i| (s, i)))
        .collect();
    let run_variant = |v: Variant| -> (Vec<EpisodeSummary>, Vec<EpisodeLog>) {
        let one = |&(s, i): &(usize, usize)| {
            let scn = spec.scenarios[s].with_variant(v);
            let log = run_episode(&scn, episode_seed(spec.master_seed, s, i));
            let summary = summarize(&log, &scn);
            (summary, (i < spec.trace_episodes).then_some(log))
        };
        let out: Vec<(EpisodeSummary, Option<EpisodeLog>)> = if spec.parallel > 1 {
            jobs.par_iter().map(one).collect()
        } else {
            jobs.iter().map(one).collect()
        };
        let mut summaries = Vec::with_capacity(out.len());
        let mut traces = Vec::new();
        for (s, t) in out {
            summaries.push(s);
            traces.extend(t);
        }
        (summaries, traces)
    };

    let mut per_variant = Vec::new();
    let mut traces = Vec::new();
    let mut run_all = || {
        for &v in &spec.variants {
            let (summaries, t) = run_variant(v);
            per_variant.push((v, summaries));
            traces.extend(t);
        }
    };
    if spec.parallel > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.parallel)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(run_all);
    } else {
        run_all();
    }

    let mut variants = Vec::new();
    for (v, episodes) in per_variant {
        let report = compute_metrics(&episodes, v.as_str())?;
        variants.push(VariantResult {
            variant: v,
            episodes,
            report,
        });
    }
    let mut gaps = Vec::new();
    if let Some((first, rest)) = variants.split_first() {
        for other in rest {
            for m in Metric::ALL {
                if let Some(g) = bootstrap_gap(
                    &first.episodes,
                    &other.episodes,
                    m,
                    spec.bootstrap_resamples,
                    spec.master_seed,
                ) {
                    gaps.push(g);
                }
            }
        }
    }
    Ok(BenchmarkResult {
        master_seed: spec.master_seed,
        variants,
        gaps,
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Tsv,
}

impl ReportFormat {
    fn delimiter(self) -> u8 {
        match self {
            ReportFormat::Csv => b',',
            ReportFormat::Tsv => b'\t',
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Tsv => "tsv",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "tsv" => Ok(ReportFormat::Tsv),
            _ => Err(format!("unknown format `{s}` (expected csv or tsv)")),
        }
    }
}

pub const EPISODE_COLUMNS: [&str; 11] = [
    "seed",
    "variant",
    "goal",
    "static_collision",
    "dynamic_collision",
    "termination",
    "L_act",
    "L_stat",
    "PE",
    "d_min",
    "LC",
];

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "variant",
    "episodes",
    "successes",
    "gcr_mean",
    "gcr_std",
    "asr_mean",
    "asr_std",
    "tsr_mean",
    "tsr_std",
    "pe_mean",
    "pe_std",
    "d_min_mean",
    "d_min_std",
    "lc_mean",
    "lc_std",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn header_line(master_seed: u64) -> String {
    format!("# rng={RNG_ALGORITHM} master_seed={master_seed}\n")
}

fn writer(path: &Path, format: ReportFormat, master_seed: u64) -> Result<csv::Writer<fs::File>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    std::io::Write::write_all(&mut f, header_line(master_seed).as_bytes()).map_err(io)?;
    Ok(csv::WriterBuilder::new().delimiter(format.delimiter()).from_writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_episodes(path: &Path, rows: &[EpisodeSummary], format: ReportFormat, master_seed: u64) -> Result<(), HarnessError> {
    let mut w = writer(path, format, master_seed)?;
    let e = csv_err(path);
    w.write_record(EPISODE_COLUMNS).map_err(&e)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.variant.to_string(),
            r.goal.to_string(),
            r.static_collision.to_string(),
            r.dynamic_collision.to_string(),
            r.termination.to_string(),
            r.l_act.to_string(),
            r.l_stat.to_string(),
            opt(r.pe),
            opt(r.d_min),
            r.lc.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summary(path: &Path, reports: &[&MetricsReport], format: ReportFormat, master_seed: u64) -> Result<(), HarnessError> {
    let mut w = writer(path, format, master_seed)?;
    let e = csv_err(path);
    w.write_record(SUMMARY_COLUMNS).map_err(&e)?;
    for r in reports {
        let pair = |s: Option<MetricStat>| [opt(s.map(|s| s.mean)), opt(s.map(|s| s.std))];
        let mut row = vec![r.variant.clone(), r.episodes.to_string(), r.successes.to_string()];
        for s in [Some(r.gcr), Some(r.asr), Some(r.tsr), r.pe, r.d_min, r.lc] {
            row.extend(pair(s));
        }
        w.write_record(&row).map_err(&e)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, HarnessError> {
    let delim = if path.extension().is_some_and(|x| x == "tsv") { b'\t' } else { b',' };
    csv::ReaderBuilder::new()
        .delimiter(delim)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err(path))
}

/// Reads a per-episode report back. Diagnostics are not stored and come
/// back zeroed.
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeSummary>, HarnessError> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |k: usize| HarnessError::Parse {
            path: path.to_path_buf(),
            column: EPISODE_COLUMNS[k],
            value: field(k).to_string(),
        };
        let f64_at = |k: usize| field(k).parse::<f64>().map_err(|_| bad(k));
        let opt_at = |k: usize| {
            if field(k).is_empty() {
                Ok(None)
            } else {
                f64_at(k).map(Some)
            }
        };
        let bool_at = |k: usize| field(k).parse::<bool>().map_err(|_| bad(k));
        out.push(EpisodeSummary {
            seed: field(0).parse().map_err(|_| bad(0))?,
            variant: field(1).parse().map_err(|_| bad(1))?,
            goal: bool_at(2)?,
            static_collision: bool_at(3)?,
            dynamic_collision: bool_at(4)?,
            termination: Termination::parse(field(5)).ok_or_else(|| bad(5))?,
            l_act: f64_at(6)?,
            l_stat: f64_at(7)?,
            pe: opt_at(8)?,
            d_min: opt_at(9)?,
            lc: f64_at(10)?,
            diagnostics: EpisodeDiagnostics::default(),
        });
    }
    Ok(out)
}

fn write_gaps(path: &Path, gaps: &[GapEstimate], format: ReportFormat, master_seed: u64) -> Result<(), HarnessError> {
    let mut w = writer(path, format, master_seed)?;
    let e = csv_err(path);
    w.write_record(["a", "b", "metric", "estimate", "ci_lo", "ci_hi", "resamples"]).map_err(&e)?;
    for g in gaps {
        w.write_record([
            g.a.to_string(),
            g.b.to_string(),
            g.metric.as_str().to_string(),
            g.estimate.to_string(),
            g.lo.to_string(),
            g.hi.to_string(),
            g.resamples.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub episodes: PathBuf,
    pub summary: PathBuf,
    pub gaps: PathBuf,
    pub traces: Vec<PathBuf>,
}

pub fn emit_report(result: &BenchmarkResult, out: &Path, format: ReportFormat) -> Result<ReportFiles, HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let ext = format.extension();
    let episodes = out.join(format!("episodes.{ext}"));
    let rows: Vec<EpisodeSummary> = result.variants.iter().flat_map(|v| v.episodes.iter().cloned()).collect();
    write_episodes(&episodes, &rows, format, result.master_seed)?;

    let summary = out.join(format!("summary.{ext}"));
    let reports: Vec<&MetricsReport> = result.variants.iter().map(|v| &v.report).collect();
    write_summary(&summary, &reports, format, result.master_seed)?;

    let gaps = out.join(format!("gaps.{ext}"));
    write_gaps(&gaps, &result.gaps, format, result.master_seed)?;


    let mut traces = Vec::new();
    if !result.traces.is_empty() {
        let dir = out.join("traces");
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for log in &result.traces {
            let path = dir.join(format!("{}_{:016x}.{ext}", log.variant, log.seed));
            let f = fs::File::create(&path).map_err(io(&path))?;
            log.write_steps_csv(f).map_err(csv_err(&path))?;
            traces.push(path);
        }
    }
    Ok(ReportFiles {
        episodes,
        summary,
        gaps,
        traces,
    })
}
