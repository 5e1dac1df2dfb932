use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use zilot_core::envs::{EnvFile, PointMassSpec};
use zilot_core::harness::{recompute_metrics, run_experiment, ExperimentConfig, RunOptions, TaskFile};
use zilot_core::ot::{sinkhorn, sinkhorn_unbalanced, transport_simplex};
use zilot_core::{Error, Matrix, OtProblem, SinkhornConfig};

#[derive(Parser)]
#[command(name = "zilot", version, about = "Zero-shot imitation by OT planning over goal sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix and write results under --out.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
    },
    /// Recompute W_min and GoalFraction from a stored diagnostics file.
    Metrics { path: PathBuf },
    /// Environment utilities.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
    /// Optimal transport utilities.
    Ot {
        #[command(subcommand)]
        command: OtCommand,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Print the environment of a task file as JSON.
    Dump { task: PathBuf },
}

#[derive(Subcommand)]
enum OtCommand {
    /// Solve an OT problem given as `{cost, source_weights?, target_weights?}`.
    Solve {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Simplex)]
        method: Method,
        #[arg(long, default_value_t = 0.02)]
        eta: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        /// Soft target marginal weight; switches Sinkhorn to the unbalanced form.
        #[arg(long)]
        xi_b: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Simplex,
    Sinkhorn,
}

#[derive(Deserialize)]
struct ProblemFile {
    cost: Matrix,
    source_weights: Option<Vec<f64>>,
    target_weights: Option<Vec<f64>>,
}

/// An error with the exit status it maps to: 2 for bad input, 3 for a
/// failure while running.
struct Failure(Error, u8);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) | Error::TooLarge(_) => 3,
            _ => 2,
        };
        Failure(e, code)
    }
}

fn at_runtime(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::InvalidDistribution(_) | Error::Index { .. } => Failure(e, 2),
        _ => Failure(e, 3),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_problem(path: &Path) -> Result<OtProblem, Error> {
    let f: ProblemFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let (n, m) = (f.cost.rows(), f.cost.cols());
    if n == 0 || m == 0 {
        return Err(Error::Config("empty cost matrix".into()));
    }
    let a = f.source_weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let b = f.target_weights.unwrap_or_else(|| vec![1.0 / m as f64; m]);
    OtProblem::new(f.cost, a, b)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out, jobs, seed_base } => {
            let exp = ExperimentConfig::load(&config)?;
            let output = run_experiment(&exp, &RunOptions { out: out.clone(), jobs, seed_base }).map_err(at_runtime)?;
            println!("{:<20} {:<20} {:>10} {:>10} {:>8} {:>8}", "task", "planner", "w_min", "w_std", "gf", "gf_std");
            for r in &output.summary {
                println!(
                    "{:<20} {:<20} {:>10.4} {:>10.4} {:>8.3} {:>8.3}",
                    r.task, r.planner, r.w_min_mean, r.w_min_std, r.gf_mean, r.gf_std
                );
            }
            eprintln!("{} episodes written to {}", output.cells.len(), out.display());
            Ok(())
        }
        Command::Metrics { path } => Ok(print_json(&recompute_metrics(&path)?)?),
        Command::Env { command: EnvCommand::Dump { task } } => {
            let file = TaskFile::load(&task)?;
            let base = task.parent().unwrap_or(Path::new("."));
            match file.tabular_world(base)? {
                Some(world) => print_json(&EnvFile::from_world(&file.name, &world))?,
                None if file.params.is_null() => print_json(&PointMassSpec::default())?,
                None => print_json(&serde_json::from_value::<PointMassSpec>(file.params).map_err(Error::from)?)?,
            }
            Ok(())
        }
        Command::Ot { command: OtCommand::Solve { path, method, eta, iterations, xi_b } } => {
            let problem = load_problem(&path)?;
            let plan = match method {
                Method::Simplex => transport_simplex(&problem),
                Method::Sinkhorn => {
                    let cfg = SinkhornConfig { eta, iterations, xi_b, tolerance: None };
                    if xi_b.is_some() {
                        sinkhorn_unbalanced(&problem, &cfg)
                    } else {
                        sinkhorn(&problem, &cfg)
                    }
                }
            };
            Ok(print_json(&plan.map_err(at_runtime)?)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(e, code)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
