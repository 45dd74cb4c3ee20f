//! End-to-end runs: simulate, analyze, sweep and compare.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, PolicyKind, RunConfig, TrafficSource};
use crate::loc::{
    percentile_cut, resolve_formula, Checker, DistributionAnalyzer, DistributionResult, LocError, LocFormula,
    ViolationReport,
};
use crate::npu::{run_simulation, trace_header, NullSink, SimError, SummaryStats, TraceSink, WorkloadProfile};
use crate::trace::{TraceError, TraceEvent, TraceReader, TraceWriter};
use crate::traffic::{generate, import_csv, Packet, TrafficError, TrafficLevel};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Loc(#[from] LocError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Percentile power: the 80% point of the at-most distribution is the
/// power that 80% of 100-packet spans stay under.
pub const PERCENTILE_POWER: &str =
    "(energy(forward[i+100]) - energy(forward[i])) / (time(forward[i+100]) - time(forward[i])) <| {0.5, 2.25, 0.01}";
/// Percentile throughput: the rate that 80% of 100-packet spans exceed.
pub const PERCENTILE_THROUGHPUT: &str =
    "(total_bit(forward[i+100]) - total_bit(forward[i])) / (time(forward[i+100]) - time(forward[i])) |> {100, 3300, 10}";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| ExperimentError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| ExperimentError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(RunConfig::parse(&text)?)
}

pub fn arrivals(cfg: &RunConfig) -> Result<Vec<Packet>> {
    match &cfg.traffic {
        TrafficSource::Csv(path) => Ok(import_csv(BufReader::new(open(path)?))?),
        TrafficSource::Generated { .. } => {
            let profile = cfg.traffic_profile().expect("generated traffic");
            Ok(generate(&profile)?)
        }
    }
}

/// Simulates `cfg`, streaming its trace into `sink`.
pub fn run<S: TraceSink>(cfg: &RunConfig, arrivals: &[Packet], sink: S) -> Result<SummaryStats> {
    let policy = cfg.dvs_policy()?;
    Ok(run_simulation(&cfg.npu, arrivals, policy.as_ref(), sink)?)
}

/// Simulates `cfg` and writes its trace to `out`.
pub fn simulate_to<W: Write>(cfg: &RunConfig, out: W) -> Result<(SummaryStats, W)> {
    let arr = arrivals(cfg)?;
    let mut w = TraceWriter::new(out, trace_header())?;
    let stats = run(cfg, &arr, &mut w)?;
    let mut out = w.into_inner();
    out.flush()?;
    Ok((stats, out))
}

pub fn check_file(path: &Path, formula: &LocFormula) -> Result<ViolationReport> {
    let mut reader = TraceReader::new(BufReader::new(open(path)?))?;
    let mut checker = Checker::new(formula, &reader.header().clone())?;
    for ev in &mut reader {
        checker.push(&ev?);
    }
    Ok(checker.finish())
}

pub fn analyze_file(path: &Path, formula: &LocFormula) -> Result<DistributionResult> {
    let mut reader = TraceReader::new(BufReader::new(open(path)?))?;
    let mut analyzer = DistributionAnalyzer::new(formula, &reader.header().clone())?;
    for ev in &mut reader {
        analyzer.push(&ev?);
    }
    Ok(analyzer.finish())
}

impl TraceSink for DistributionAnalyzer {
    fn emit(&mut self, ev: &TraceEvent) -> io::Result<()> {
        self.push(ev);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    /// Controller under study; `none` sweeps only baselines.
    pub policy: PolicyKind,
    /// Top threshold in Mbps for TDVS, idle fraction for EDVS.
    pub thresholds: Vec<f64>,
    /// Window lengths in reference cycles.
    pub windows: Vec<u64>,
    pub seeds: Vec<u64>,
    pub p: f64,
}

impl SweepSpec {
    pub fn new(base: RunConfig, policy: PolicyKind) -> Self {
        let (thresholds, windows) = match policy {
            PolicyKind::Edvs => (vec![0.10], vec![20_000, 40_000, 60_000]),
            _ => (vec![800.0, 1000.0, 1200.0, 1400.0], vec![20_000, 40_000, 60_000, 80_000]),
        };
        let seeds = vec![base.npu.seed];
        SweepSpec {
            base,
            policy,
            thresholds,
            windows,
            seeds,
            p: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let policy_axes = self.policy == PolicyKind::None || !(self.thresholds.is_empty() || self.windows.is_empty());
        if self.seeds.is_empty() || !policy_axes {
            return Err(ExperimentError::Usage("sweep axes must be non-empty".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(ExperimentError::Usage(format!("percentile {} must lie in (0, 1)", self.p)));
        }
        Ok(())
    }

    fn point(&self, policy: PolicyKind, threshold: f64, window: u64, seed: u64) -> RunConfig {
        let mut c = self.base.clone();
        c.npu.seed = seed;
        c.policy = policy;
        match policy {
            PolicyKind::Tdvs => {
                c.tdvs_top_mbps = threshold;
                c.tdvs_window = window;
            }
            PolicyKind::Edvs => {
                c.edvs_idle_threshold = threshold;
                c.edvs_window = window;
            }
            PolicyKind::None => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub threshold: Option<f64>,
    pub window: Option<u64>,
    pub seed: u64,
    pub pct_power_w: Option<f64>,
    pub pct_throughput_mbps: Option<f64>,
    pub mean_power_w: f64,
    pub mean_throughput_mbps: f64,
    pub transitions: u64,
    pub dropped: u64,
}

/// Simulates one configuration with both percentile analyzers attached.
pub fn measure(cfg: &RunConfig, p: f64) -> Result<(SummaryStats, Option<f64>, Option<f64>)> {
    let arr = arrivals(cfg)?;
    let header = trace_header();
    let power = DistributionAnalyzer::new(&resolve_formula(PERCENTILE_POWER)?, &header)?;
    let tput = DistributionAnalyzer::new(&resolve_formula(PERCENTILE_THROUGHPUT)?, &header)?;
    let mut sink = (power, tput);
    let stats = run(cfg, &arr, &mut sink)?;
    let (power, tput) = sink;
    Ok((stats, percentile_cut(&power.finish(), p), percentile_cut(&tput.finish(), p)))
}

/// Every grid point for every seed plus one baseline per seed. Points run
/// in parallel; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &seed in &spec.seeds {
        jobs.push((PolicyKind::None, None, None, seed));
    }
    if spec.policy != PolicyKind::None {
        for &t in &spec.thresholds {
            for &w in &spec.windows {
                for &seed in &spec.seeds {
                    jobs.push((spec.policy, Some(t), Some(w), seed));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(policy, t, w, seed)| {
            let cfg = spec.point(policy, t.unwrap_or(0.0), w.unwrap_or(0), seed);
            let (stats, pp, pt) = measure(&cfg, spec.p)?;
            Ok(SweepRow {
                policy,
                threshold: t,
                window: w,
                seed,
                pct_power_w: pp,
                pct_throughput_mbps: pt,
                mean_power_w: stats.mean_power_w(),
                mean_throughput_mbps: stats.mean_throughput_mbps(),
                transitions: stats.transitions(),
                dropped: stats.dropped_pkts,
            })
        })
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "policy",
        "threshold",
        "window_kcycles",
        "seed",
        "p_power_w",
        "p_throughput_mbps",
        "mean_power_w",
        "mean_throughput_mbps",
        "transitions",
        "dropped",
    ])
    .map_err(io::Error::from)?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            opt(r.threshold, 3),
            r.window.map(|w| format!("{}", w as f64 / 1000.0)).unwrap_or_default(),
            r.seed.to_string(),
            opt(r.pct_power_w, 2),
            opt(r.pct_throughput_mbps, 0),
            format!("{:.6}", r.mean_power_w),
            format!("{:.3}", r.mean_throughput_mbps),
            r.transitions.to_string(),
            r.dropped.to_string(),
        ])
        .map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-averaged values of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMean {
    pub threshold: Option<f64>,
    pub window: Option<u64>,
    pub pct_power_w: Option<f64>,
    pub pct_throughput_mbps: Option<f64>,
    pub mean_power_w: f64,
    pub mean_throughput_mbps: f64,
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = vals.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Averages rows over seeds, keeping grid order; the baseline comes first.
pub fn grid_means(rows: &[SweepRow]) -> Vec<GridMean> {
    let mut keys: Vec<(Option<f64>, Option<u64>)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.threshold, r.window)) {
            keys.push((r.threshold, r.window));
        }
    }
    keys.into_iter()
        .map(|(t, w)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.threshold == t && r.window == w).collect();
            let n = group.len() as f64;
            GridMean {
                threshold: t,
                window: w,
                pct_power_w: mean_opt(group.iter().map(|r| r.pct_power_w)),
                pct_throughput_mbps: mean_opt(group.iter().map(|r| r.pct_throughput_mbps)),
                mean_power_w: group.iter().map(|r| r.mean_power_w).sum::<f64>() / n,
                mean_throughput_mbps: group.iter().map(|r| r.mean_throughput_mbps).sum::<f64>() / n,
            }
        })
        .collect()
}

/// gnuplot `splot` layout: `threshold window p_power p_throughput`, one
/// block per threshold separated by blank lines. Baselines are omitted.
pub fn write_surface_gnuplot<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "# threshold window_kcycles p_power_w p_throughput_mbps mean_power_w mean_throughput_mbps")?;
    let means = grid_means(rows);
    let mut last = None;
    for m in means.iter().filter(|m| m.threshold.is_some()) {
        if last.is_some() && last != m.threshold {
            writeln!(out)?;
        }
        last = m.threshold;
        writeln!(
            out,
            "{} {} {} {} {:.6} {:.3}",
            m.threshold.unwrap_or(0.0),
            m.window.unwrap_or(0) as f64 / 1000.0,
            opt(m.pct_power_w, 2),
            opt(m.pct_throughput_mbps, 0),
            m.mean_power_w,
            m.mean_throughput_mbps
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub base: RunConfig,
    pub benchmarks: Vec<String>,
    pub levels: Vec<TrafficLevel>,
    pub tdvs_top_mbps: f64,
    pub tdvs_window: u64,
    pub edvs_idle_threshold: f64,
    pub edvs_window: u64,
    pub seeds: Vec<u64>,
}

impl CompareSpec {
    pub fn new(base: RunConfig) -> Self {
        let seeds = vec![base.npu.seed];
        CompareSpec {
            benchmarks: WorkloadProfile::BUILTIN.iter().map(|s| s.to_string()).collect(),
            levels: TrafficLevel::ALL.to_vec(),
            tdvs_top_mbps: base.tdvs_top_mbps,
            tdvs_window: base.tdvs_window,
            edvs_idle_threshold: base.edvs_idle_threshold,
            edvs_window: base.edvs_window,
            seeds,
            base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub benchmark: String,
    pub level: TrafficLevel,
    pub policy: PolicyKind,
    /// Seed-averaged.
    pub mean_power_w: f64,
    pub energy_uj: f64,
    pub throughput_mbps: f64,
    /// Fractions of the same cell's no-DVS run.
    pub power_saving: f64,
    pub throughput_loss: f64,
}

pub fn run_compare(spec: &CompareSpec) -> Result<Vec<CompareRow>> {
    if spec.benchmarks.is_empty() || spec.levels.is_empty() || spec.seeds.is_empty() {
        return Err(ExperimentError::Usage("compare axes must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for b in &spec.benchmarks {
        let profile = WorkloadProfile::builtin(b)
            .ok_or_else(|| ExperimentError::Usage(format!("unknown benchmark `{b}`")))?;
        for &level in &spec.levels {
            for policy in PolicyKind::ALL {
                for &seed in &spec.seeds {
                    let mut c = spec.base.clone();
                    c.npu.profile = profile.clone();
                    c.npu.seed = seed;
                    c.policy = policy;
                    c.tdvs_top_mbps = spec.tdvs_top_mbps;
                    c.tdvs_window = spec.tdvs_window;
                    c.edvs_idle_threshold = spec.edvs_idle_threshold;
                    c.edvs_window = spec.edvs_window;
                    if let TrafficSource::Generated { rate_mbps, .. } = &mut c.traffic {
                        *rate_mbps = level.rate_mbps();
                    } else {
                        return Err(ExperimentError::Usage("compare needs generated traffic".into()));
                    }
                    jobs.push((b.clone(), level, policy, c));
                }
            }
        }
    }
    let stats: Vec<SummaryStats> = jobs
        .par_iter()
        .map(|(_, _, _, c)| {
            let arr = arrivals(c)?;
            run(c, &arr, NullSink)
        })
        .collect::<Result<_>>()?;

    let n = spec.seeds.len();
    let mut rows: Vec<CompareRow> = Vec::new();
    for (chunk, s) in jobs.chunks(n).zip(stats.chunks(n)) {
        let k = n as f64;
        let (b, level, policy, _) = &chunk[0];
        rows.push(CompareRow {
            benchmark: b.clone(),
            level: *level,
            policy: *policy,
            mean_power_w: s.iter().map(|x| x.mean_power_w()).sum::<f64>() / k,
            energy_uj: s.iter().map(|x| x.energy_uj).sum::<f64>() / k,
            throughput_mbps: s.iter().map(|x| x.mean_throughput_mbps()).sum::<f64>() / k,
            power_saving: 0.0,
            throughput_loss: 0.0,
        });
    }
    // Rows come in (none, tdvs, edvs) triples per cell.
    for cell in rows.chunks_mut(PolicyKind::ALL.len()) {
        let (bp, bt) = (cell[0].mean_power_w, cell[0].throughput_mbps);
        for r in cell {
            r.power_saving = 1.0 - r.mean_power_w / bp;
            r.throughput_loss = if bt > 0.0 { 1.0 - r.throughput_mbps / bt } else { 0.0 };
        }
    }
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "benchmark",
        "traffic",
        "policy",
        "mean_power_w",
        "energy_uj",
        "throughput_mbps",
        "power_saving",
        "throughput_loss",
    ])
    .map_err(io::Error::from)?;
    for r in rows {
        w.write_record([
            r.benchmark.clone(),
            r.level.name().to_string(),
            r.policy.to_string(),
            format!("{:.6}", r.mean_power_w),
            format!("{:.3}", r.energy_uj),
            format!("{:.3}", r.throughput_mbps),
            format!("{:.4}", r.power_saving),
            format!("{:.4}", r.throughput_loss),
        ])
        .map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_to_path(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out)?;
    out.flush()?;
    Ok(())
}
