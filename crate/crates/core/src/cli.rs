//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::balancer::PolicyKind;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fractal::{estimate_hurst_curve, QGrid, ScaleGrid};
use crate::metrics::write_reports_csv;
use crate::sim::{self, table1_cells, RunOutput, Scenario};
use crate::traffic::{generate_traffic, read_trace_csv, TrafficTrace};

#[derive(Debug, Parser)]
#[command(name = "mfload", version, about = "Multifractal traffic and cluster load-imbalance simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Top-level seed, overriding `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// round_robin, least_loaded or min_imbalance.
    #[arg(long)]
    pub policy: Option<PolicyKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a calibrated multifractal trace and its measured h(q) curve.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Target h(2).
        #[arg(long = "h")]
        h: Option<f64>,
        /// Target h(q_min) - h(q_max).
        #[arg(long = "delta-h")]
        delta_h: Option<f64>,
    },
    /// Estimate h(q) of a trace CSV.
    Analyze {
        /// Trace CSV with an `intensity` column.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Comma-separated moment orders.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q: Option<Vec<f64>>,
        /// Smallest window in slots.
        #[arg(long, default_value_t = ScaleGrid::DEFAULT_MIN_SCALE)]
        min_scale: usize,
        /// Polynomial order removed in each window.
        #[arg(long, default_value_t = 1)]
        detrend_order: usize,
    },
    /// Run one scenario and write its imbalance reports and summary.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a grid of (H, delta-h) cells over several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Use the 16-cell grid of H 0.6..0.9 and delta-h 1.5, 2, 4, 6.
        #[arg(long)]
        table1: bool,
        /// Replicates per cell.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run the scenario under every policy and export a side-by-side comparison.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.scenario.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if let Some(policy) = common.policy {
        config.scenario.policy = policy;
    }
    config.validate()?;
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_curve(path: &Path, trace: &TrafficTrace, status: &str, target: (f64, f64)) -> Result<()> {
    let footer = [
        ("status", status.to_string()),
        ("target_h", target.0.to_string()),
        ("target_delta_h", target.1.to_string()),
    ];
    trace
        .achieved
        .write_csv(create(path)?, &footer)
        .map_err(|e| csv_error(path, e))
}

/// Runs a parsed command; returns the lines to print on success.
pub fn execute(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Generate { common, h, delta_h } => generate(&common, h, delta_h),
        Command::Analyze {
            input,
            common,
            q,
            min_scale,
            detrend_order,
        } => analyze(&input, &common, q, min_scale, detrend_order),
        Command::Simulate { common } => simulate(&common),
        Command::Sweep {
            common,
            table1,
            seeds,
        } => sweep(&common, table1, seeds),
        Command::Report { common } => report(&common),
    }
}

fn generate(common: &Common, h: Option<f64>, delta_h: Option<f64>) -> Result<Vec<String>> {
    let mut config = load_config(common)?;
    if let Some(h) = h {
        config.scenario.traffic.target_h = h;
    }
    if let Some(d) = delta_h {
        config.scenario.traffic.target_delta_h = d;
    }
    let spec = config.scenario.traffic_spec();
    spec.validate()?;
    let target = (spec.target_h, spec.target_delta_h);
    let dir = &config.output.dir;
    let (trace, status, failure) = match generate_traffic(&spec) {
        Ok(t) => (t, "ok", None),
        Err(Error::Calibration { iterations, best }) => {
            let trace = (*best).clone();
            (trace, "calibration_failed", Some(Error::Calibration { iterations, best }))
        }
        Err(e) => return Err(e),
    };
    trace.write_csv(&dir.join("trace.csv"))?;
    write_curve(&dir.join("curve.csv"), &trace, status, target)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(vec![format!(
        "h(2) = {:.4}  delta_h = {:.4}  ({} slots)",
        trace.achieved.hurst(),
        trace.delta_h,
        trace.len()
    )])
}

fn analyze(
    input: &Path,
    common: &Common,
    q: Option<Vec<f64>>,
    min_scale: usize,
    detrend_order: usize,
) -> Result<Vec<String>> {
    let config = load_config(common)?;
    let series = read_trace_csv(input)?;
    let q = match q {
        Some(values) => QGrid::new(values)?,
        None => QGrid::default(),
    };
    let scales = ScaleGrid::dyadic(series.len(), min_scale, detrend_order)?;
    let curve = estimate_hurst_curve(&series, &q, &scales)?;
    let path = config.output.dir.join("curve.csv");
    curve
        .write_csv(create(&path)?, &[])
        .map_err(|e| csv_error(&path, e))?;
    Ok(vec![format!(
        "h(2) = {:.4}  delta_h = {:.4}",
        curve.hurst(),
        curve.delta_h
    )])
}

fn write_run(dir: &Path, stem: &str, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    let path = dir.join(format!("{stem}.csv"));
    write_reports_csv(create(&path)?, &out.reports).map_err(|e| csv_error(&path, e))?;
    let mut text = format!("policy = {}\nseed = {}\n", scenario.policy, scenario.seed);
    text += &out.summary.to_text(scenario.run_length);
    text += &format!(
        "admitted = {}\ndropped = {}\n",
        out.stats.admitted, out.stats.dropped
    );
    write_text(&dir.join(format!("{stem}_summary.txt")), &text)
}

fn simulate(common: &Common) -> Result<Vec<String>> {
    let config = load_config(common)?;
    let s = &config.scenario;
    let out = sim::run(s)?;
    write_run(&config.output.dir, "report", s, &out)?;
    Ok(out
        .summary
        .to_text(s.run_length)
        .lines()
        .take(2)
        .map(String::from)
        .collect())
}

fn sweep(common: &Common, table1: bool, seeds: Option<usize>) -> Result<Vec<String>> {
    let mut config = load_config(common)?;
    if table1 {
        config.sweep.cells = table1_cells();
    }
    if let Some(n) = seeds {
        config.sweep.seeds = n;
    }
    config.validate()?;
    let rows = sim::sweep(&config.scenario, &config.sweep.cells, config.sweep.seeds)?;
    let path = config.output.dir.join("sweep.csv");
    sim::write_sweep_csv(create(&path)?, &rows).map_err(|e| csv_error(&path, e))?;
    Ok(rows
        .iter()
        .map(|r| {
            let t_eq = if r.censored * 2 >= r.replicates.len() && r.censored > 0 {
                format!(">{}", config.scenario.run_length)
            } else {
                format!("{:.0}", r.t_eq)
            };
            format!(
                "H={} delta_h={}  t_eq={t_eq}  imb_tot={:.5}",
                r.cell.h, r.cell.delta_h, r.imb_tot_final
            )
        })
        .collect())
}

fn report(common: &Common) -> Result<Vec<String>> {
    let config = load_config(common)?;
    let dir = &config.output.dir;
    let mut runs = Vec::new();
    for kind in PolicyKind::ALL {
        let mut s = config.scenario.clone();
        s.policy = kind;
        let out = sim::run(&s)?;
        write_run(dir, &format!("report_{kind}"), &s, &out)?;
        runs.push((kind, out));
    }
    let path = dir.join("comparison.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["t".to_string()];
    header.extend(runs.iter().map(|(k, _)| format!("imb_tot_{k}")));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    let n = runs.iter().map(|(_, o)| o.reports.len()).min().unwrap_or(0);
    for i in 0..n {
        let mut row = vec![runs[0].1.reports[i].t.to_string()];
        row.extend(runs.iter().map(|(_, o)| o.reports[i].imb_tot.to_string()));
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(runs
        .iter()
        .map(|(k, o)| {
            format!(
                "{k:<14} imb_tot_final={:.5}  equilibrium={}",
                o.summary.imb_tot_final,
                o.summary
                    .equilibrium_time
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| format!(">{}", config.scenario.run_length))
            )
        })
        .collect())
}
