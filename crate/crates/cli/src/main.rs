use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use crs_core::harness::{save_pfs_csv, write_pfs_csv, Experiment};
use crs_core::measures::{fit_log_slope, slope_window};
use crs_core::problems::PRESET_NAMES;
use crs_core::ratefn::{kkt_residual, overall_rate, pair_rate, solve_optimal_fractions};
use crs_core::{AllocationFractions, ExperimentConfig, Grid, PolicyConfig, ProblemConfig, ProblemSpec};

#[derive(Parser)]
#[command(name = "crs", version, about = "Contextual ranking and selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its PFS table as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output path; overrides the config. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit log-PFS slopes under a fixed allocation.
    Slope {
        #[arg(long)]
        config: PathBuf,
        /// JSON matrix of fractions, one row per design.
        #[arg(long)]
        fractions: PathBuf,
        /// Checkpoints with fewer failure events than this end the window.
        #[arg(long, default_value_t = 20.0)]
        min_events: f64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Tabulate pair rates, the overall rate and optimality residuals.
    Ratefn {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        alpha: PathBuf,
    },
    /// Print the rate-optimal fractions as a JSON matrix.
    Solve {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// List the built-in problems.
    Presets,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_problem(path: &Path) -> Result<ProblemSpec> {
    let problem: ProblemConfig = read_json(path)?;
    Ok(problem.build()?)
}

fn load_fractions(path: &Path) -> Result<AllocationFractions> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    Ok(AllocationFractions::new(Grid::from_rows(rows)?)?)
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if out.is_some() {
        cfg.output = out;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    let series = Experiment::prepare(cfg.clone())?.run()?;
    match &cfg.output {
        Some(path) => save_pfs_csv(&series, path)?,
        None => write_pfs_csv(&series, io::stdout().lock())?,
    }
    Ok(())
}

fn slope(config: &Path, fractions: &Path, min_events: f64, threads: Option<usize>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    let rows: Vec<Vec<f64>> = read_json(fractions)?;
    cfg.policy = PolicyConfig::Fixed(rows);
    if threads.is_some() {
        cfg.threads = threads;
    }
    let exp = Experiment::prepare(cfg)?;
    let series = exp.run()?;
    let window = slope_window(&[&series.pfs_e, &series.pfs_m, &series.pfs_a], series.macro_reps, min_events)?;
    let mut report = serde_json::Map::new();
    report.insert("window".into(), serde_json::json!([series.checkpoints[window.start], series.checkpoints[window.end - 1]]));
    for (name, pfs) in [("pfs_e", &series.pfs_e), ("pfs_m", &series.pfs_m), ("pfs_a", &series.pfs_a)] {
        let fit = fit_log_slope(&series.checkpoints, pfs, window.clone())?;
        report.insert(name.into(), serde_json::to_value(fit)?);
    }
    if exp.spec.is_analytic() {
        let alpha = exp.fixed_fractions().expect("fixed mode");
        let rate = overall_rate(&exp.spec, alpha)?;
        report.insert("expected_slope".into(), serde_json::json!(-rate.value));
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn ratefn(spec: &Path, alpha: &Path) -> Result<()> {
    let spec = load_problem(spec)?;
    let alpha = load_fractions(alpha)?;
    if !spec.is_analytic() {
        bail!("rate functions need analytic models in every cell");
    }
    let truth = spec.require_ground_truth()?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["table", "context", "design", "other_context", "other_design", "gamma", "value"])?;
    let cell = |x: usize| x.to_string();
    // challengers in the order the residual lists enumerate them
    let mut challengers = Vec::new();
    for j in 0..spec.m() {
        let b = truth.best(j);
        for i in (0..spec.k()).filter(|&i| i != b) {
            challengers.push((j, i));
            let (ab, ai) = (alpha.get(b, j), alpha.get(i, j));
            let (best, other) = (spec.model(b, j), spec.model(i, j));
            let (value, gamma) = if ab > 0.0 && ai > 0.0 {
                let r = pair_rate(best, other, ab, ai)?;
                (r.value, r.gamma.to_string())
            } else {
                (0.0, String::new())
            };
            w.write_record(["pair_rate", &cell(j), &cell(i), &cell(j), &cell(b), &gamma, &value.to_string()])?;
        }
    }
    let r = overall_rate(&spec, &alpha)?;
    w.write_record(["overall_rate", &cell(r.context), &cell(r.design), "", "", "", &r.value.to_string()])?;
    match kkt_residual(&spec, &alpha) {
        Ok(kkt) => {
            for (j, v) in kkt.balance.iter().enumerate() {
                w.write_record(["balance", &cell(j), "", "", "", "", &v.to_string()])?;
            }
            let (mut within, mut across) = (kkt.within_context.iter(), kkt.across_context.iter());
            for (a, &(ja, ia)) in challengers.iter().enumerate() {
                for &(jb, ib) in &challengers[a + 1..] {
                    let (table, v) = if ja == jb { ("within_context", within.next()) } else { ("across_context", across.next()) };
                    let v = v.expect("one residual per pair");
                    w.write_record([table, &cell(ja), &cell(ia), &cell(jb), &cell(ib), "", &v.to_string()])?;
                }
            }
        }
        Err(e) => eprintln!("residuals skipped: {e}"),
    }
    w.flush()?;
    Ok(())
}

fn solve(spec: &Path, tol: f64) -> Result<()> {
    let spec = load_problem(spec)?;
    let f = solve_optimal_fractions(&spec, tol)?;
    println!("{}", serde_json::to_string(&f.grid().to_rows())?);
    Ok(())
}

fn presets() -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "name\tcontexts\tdesigns")?;
    for name in PRESET_NAMES {
        let p = crs_core::problems::preset(name)?;
        writeln!(out, "{name}\t{}\t{}", p.m(), p.k())?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, seed, threads } => run(&config, out, seed, threads),
        Command::Slope { config, fractions, min_events, threads } => slope(&config, &fractions, min_events, threads),
        Command::Ratefn { spec, alpha } => ratefn(&spec, &alpha),
        Command::Solve { spec, tol } => solve(&spec, tol),
        Command::Presets => presets(),
    }
}
