mod curves;
mod experiment;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use colme_core::protocol::{run_seeds, RunResult, Trajectory};
use colme_core::validate::{run_validation, ValidationOptions};
use colme_core::Error as CoreError;
use serde_json::json;

use crate::curves::{analytic_rows, sample_times, simulated_rows, write_csv};
use crate::experiment::{Curve, Experiment};

/// Environment variable holding the number of worker threads for seed sweeps.
const WORKERS_ENV: &str = "COLME_WORKERS";

#[derive(Parser)]
#[command(name = "colme", version, about = "Private collaborative mean estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation for every seed and write trajectory.csv and summary.json.
    Simulate {
        config: PathBuf,
        /// Run seeds 0..N (overrides the config).
        #[arg(long, conflicts_with = "seed_list")]
        seeds: Option<u64>,
        /// Comma-separated seeds (overrides the config).
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Output directory (overrides the config; default "out").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every K-th time step in the CSV.
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Write the analytic curves only.
    Curves {
        config: PathBuf,
        /// Output directory; the CSV goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Run the built-in consistency checks.
    Validate {
        /// Smaller Monte Carlo sizes.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
        /// Scale the noise variance drawn by the mechanisms under test.
        #[arg(long, default_value_t = 1.0, hide = true)]
        inject_sigma_dp_fault: f64,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Checks(usize),
}

impl Failure {
    fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::Parameter(_) | CoreError::Config(_) | CoreError::Unsupported(_) => Failure::Config(e.into()),
            CoreError::Protocol(_) | CoreError::ImpossibleState(_) => Failure::Runtime(e.into()),
        }
    }
}

fn init_pool() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Runtime)?;
    let path = dir.join(name);
    File::create(&path)
        .with_context(|| format!("cannot write {}", path.display()))
        .map(BufWriter::new)
        .map_err(Failure::Runtime)
}

fn summary(exp: &Experiment, results: &[RunResult], tr: &Trajectory) -> serde_json::Value {
    let last = tr.mean.len();
    let acc: Vec<f64> = results.iter().map(|r| r.class_accuracy).collect();
    let acc_mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
    // Worst case over seeds for every ordered pair.
    let mut channels: Vec<serde_json::Value> = Vec::new();
    if let Some(first) = results.first() {
        for (i, ch) in first.budgets.iter().enumerate() {
            let worst = results.iter().map(|r| &r.budgets[i]).max_by(|a, b| a.epsilon.total_cmp(&b.epsilon)).unwrap_or(ch);
            channels.push(json!({
                "from": ch.from,
                "to": ch.to,
                "releases": worst.releases,
                "epsilon": worst.epsilon,
                "delta": worst.delta,
                "variance_epsilon": worst.variance_epsilon,
                "variance_delta": worst.variance_delta,
            }));
        }
    }
    let max_eps = channels.iter().filter_map(|c| c["epsilon"].as_f64()).fold(0.0, f64::max);
    json!({
        "config": exp.sim,
        "seeds": exp.seeds,
        "t_max": exp.sim.t_max,
        "final_mse": if last > 0 {
            json!({"t": last, "mean": tr.mean[last - 1], "stderr": tr.stderr[last - 1], "runs": tr.runs})
        } else {
            serde_json::Value::Null
        },
        "class_accuracy": {"mean": acc_mean, "per_seed": acc},
        "privacy": {
            "mechanism": exp.sim.mechanism,
            "noise": exp.sim.noise,
            "max_epsilon": max_eps,
            "channels": channels,
        },
    })
}

fn simulate(
    config: &Path,
    seeds: Option<u64>,
    seed_list: Option<Vec<u64>>,
    out: Option<PathBuf>,
    stride: Option<u64>,
) -> Result<(), Failure> {
    let mut exp = Experiment::load(config).map_err(Failure::Config)?;
    if let Some(n) = seeds {
        exp.seeds = (0..n).collect();
    }
    if let Some(list) = seed_list {
        exp.seeds = list;
    }
    if exp.seeds.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("no seeds to run")));
    }
    let stride = stride.unwrap_or(exp.stride).max(1);
    let dir = out.or_else(|| exp.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let results = run_seeds(&exp.sim, &exp.seeds).map_err(Failure::from_core)?;
    let tr = Trajectory::from_results(&results);
    let times = sample_times(exp.sim.t_max, stride);
    let mut rows = analytic_rows(&exp.sim, &exp.curves, &times).map_err(Failure::Config)?;
    if exp.curves.contains(&Curve::Simulated) {
        rows.extend(simulated_rows(&tr, &times));
    }
    write_csv(create(&dir, "trajectory.csv")?, &mut rows, &exp.curves)
        .context("writing trajectory.csv")
        .map_err(Failure::Runtime)?;
    let s = summary(&exp, &results, &tr);
    serde_json::to_writer_pretty(create(&dir, "summary.json")?, &s)
        .context("writing summary.json")
        .map_err(Failure::Runtime)?;
    if let Some(v) = s["final_mse"]["mean"].as_f64() {
        eprintln!("{} runs, final MSE {v:.6e}; wrote {}", tr.runs, dir.display());
    }
    Ok(())
}

fn curves_cmd(config: &Path, out: Option<PathBuf>, stride: Option<u64>) -> Result<(), Failure> {
    let exp = Experiment::load(config).map_err(Failure::Config)?;
    let stride = stride.unwrap_or(exp.stride).max(1);
    let times = sample_times(exp.sim.t_max, stride);
    let wanted: Vec<Curve> = exp.curves.iter().copied().filter(|c| *c != Curve::Simulated).collect();
    let mut rows = analytic_rows(&exp.sim, &wanted, &times).map_err(Failure::Config)?;
    let res = match out {
        Some(dir) => write_csv(create(&dir, "trajectory.csv")?, &mut rows, &wanted),
        None => write_csv(std::io::stdout().lock(), &mut rows, &wanted),
    };
    res.context("writing curves").map_err(Failure::Runtime)
}

fn validate(quick: bool, seed: u64, fault: f64) -> Result<(), Failure> {
    let reports = run_validation(&ValidationOptions { quick, seed, sigma_dp_fault: fault });
    let failed = reports.iter().filter(|r| !r.passed).count();
    for r in &reports {
        println!("{r}");
    }
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    if failed > 0 {
        Err(Failure::Checks(failed))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_pool() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let res = match cli.command {
        Command::Simulate { config, seeds, seed_list, out, stride } => simulate(&config, seeds, seed_list, out, stride),
        Command::Curves { config, out, stride } => curves_cmd(&config, out, stride),
        Command::Validate { quick, seed, inject_sigma_dp_fault } => validate(quick, seed, inject_sigma_dp_fault),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("runtime error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} validation checks failed");
            ExitCode::from(3)
        }
    }
}
