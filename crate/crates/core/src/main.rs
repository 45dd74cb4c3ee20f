use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use npdvs::config::{PolicyKind, RunConfig};
use npdvs::experiment::{self as exp, CompareSpec, ExperimentError, SweepSpec};
use npdvs::loc::resolve_formula;
use npdvs::npu::SummaryStats;
use npdvs::traffic::TrafficLevel;

#[derive(Parser)]
#[command(name = "npdvs", version, about = "Network-processor DVS simulator and trace analyzer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulator and write its trace.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Also write the one-row summary CSV here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Check an assertion formula against a trace; exits 1 on violations.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        formula: String,
    },
    /// Bin a distribution formula (or `power100` / `tput100`) over a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        formula: String,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Simulate and analyze a threshold x window grid plus baselines.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "tdvs")]
        policy: PolicyKind,
        /// Mbps for TDVS, idle fraction for EDVS.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        windows_kcycles: Option<Vec<f64>>,
        /// Single repetition seed; `--seeds` takes a list.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 0.8)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Compare no DVS, TDVS and EDVS across benchmarks and traffic levels.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        benchmarks: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<String>>,
        #[arg(long)]
        tdvs_threshold: Option<f64>,
        #[arg(long)]
        tdvs_window_kcycles: Option<f64>,
        #[arg(long)]
        edvs_threshold: Option<f64>,
        #[arg(long)]
        edvs_window_kcycles: Option<f64>,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig, ExperimentError> {
    match path {
        Some(p) => exp::load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn cycles(k: f64) -> Result<u64, ExperimentError> {
    let c = (k * 1000.0).round();
    if c >= 1.0 && c.is_finite() {
        Ok(c as u64)
    } else {
        Err(ExperimentError::Usage(format!("window {k} kcycles must be positive")))
    }
}

fn write_out(path: Option<&PathBuf>, f: impl FnOnce(&mut dyn Write) -> exp::Result<()>) -> exp::Result<()> {
    match path {
        Some(p) => exp::write_to_path(p, f),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExperimentError> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            seed,
            policy,
            summary,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.npu.seed = s;
            }
            if let Some(p) = policy {
                cfg.policy = p;
            }
            cfg.validate()?;
            let mut stats = None;
            exp::write_to_path(&out, |w| {
                stats = Some(exp::simulate_to(&cfg, w)?.0);
                Ok(())
            })?;
            let stats = stats.expect("simulation ran");
            let row = format!("{}\n{}\n", SummaryStats::CSV_HEADER, stats.csv_row());
            if let Some(p) = summary {
                exp::write_to_path(&p, |w| Ok(w.write_all(row.as_bytes())?))?;
            }
            print!("{row}");
        }
        Cmd::Check { trace, formula } => {
            let f = resolve_formula(&formula)?;
            let report = exp::check_file(&trace, &f)?;
            println!("formula: {}", report.formula);
            println!(
                "evaluated: {}  undefined: {}  not evaluable: {}",
                report.evaluated_instances, report.undefined_instances, report.not_evaluable
            );
            println!("violations: {}", report.violations.len());
            for (i, v) in &report.violations {
                println!("  i = {i}: {v}");
            }
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Analyze {
            trace,
            formula,
            out,
            gnuplot,
        } => {
            let f = resolve_formula(&formula)?;
            let result = exp::analyze_file(&trace, &f)?;
            write_out(out.as_ref(), |w| Ok(result.write_csv(w)?))?;
            if let Some(g) = gnuplot {
                exp::write_to_path(&g, |w| Ok(result.write_gnuplot(w)?))?;
            }
        }
        Cmd::Sweep {
            config,
            policy,
            thresholds,
            windows_kcycles,
            seed,
            seeds,
            p,
            out,
            gnuplot,
        } => {
            let mut spec = SweepSpec::new(base_config(config.as_ref())?, policy);
            if let Some(t) = thresholds {
                spec.thresholds = t;
            }
            if let Some(w) = windows_kcycles {
                spec.windows = w.into_iter().map(cycles).collect::<Result<_, _>>()?;
            }
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            spec.p = p;
            let rows = exp::run_sweep(&spec)?;
            write_out(out.as_ref(), |w| exp::write_sweep_csv(&rows, w))?;
            if let Some(g) = gnuplot {
                exp::write_to_path(&g, |w| exp::write_surface_gnuplot(&rows, w))?;
            }
        }
        Cmd::Compare {
            config,
            benchmarks,
            levels,
            tdvs_threshold,
            tdvs_window_kcycles,
            edvs_threshold,
            edvs_window_kcycles,
            seed,
            seeds,
            out,
        } => {
            let mut spec = CompareSpec::new(base_config(config.as_ref())?);
            if let Some(b) = benchmarks {
                spec.benchmarks = b;
            }
            if let Some(l) = levels {
                spec.levels = l
                    .iter()
                    .map(|s| {
                        TrafficLevel::parse(s)
                            .ok_or_else(|| ExperimentError::Usage(format!("unknown traffic level `{s}`")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            if let Some(t) = tdvs_threshold {
                spec.tdvs_top_mbps = t;
            }
            if let Some(w) = tdvs_window_kcycles {
                spec.tdvs_window = cycles(w)?;
            }
            if let Some(t) = edvs_threshold {
                spec.edvs_idle_threshold = t;
            }
            if let Some(w) = edvs_window_kcycles {
                spec.edvs_window = cycles(w)?;
            }
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            let rows = exp::run_compare(&spec)?;
            write_out(out.as_ref(), |w| exp::write_compare_csv(&rows, w))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
