// Validation guards are written as `!(x > 0.0)` so NaN values fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "qcd",
    version,
    about = "Quickest change detection with a censoring sensor: experiments and policy search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write CSV + gnuplot artifacts.
    Run {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $QCD_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the simulation pool.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Search the optimal censoring region for each energy budget.
    Optimize {
        /// Comma-separated energy budgets in (0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// Left-endpoint grid step of the search.
        #[arg(long, default_value_t = 0.001)]
        grid: f64,
        #[arg(long, default_value_t = 0.0)]
        mu0: f64,
        #[arg(long, default_value_t = 1.0)]
        mu1: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, workers } => run(config, out, seed, workers),
        Command::Optimize { eps, grid, mu0, mu1, sigma } => {
            for &e in &eps {
                if !(e > 0.0 && e <= 1.0) {
                    eprintln!("config error: eps entries must lie in (0, 1], got {e}");
                    return ExitCode::from(2);
                }
            }
            match runner::optimize_and_print(mu0, mu1, sigma, &eps, grid) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

fn run(
    config_path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> ExitCode {
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(2);
        }
    };
    let mut resolved = match config::parse(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        resolved.seed = s;
    }
    let out_dir = runner::resolve_out_dir(out);

    match runner::execute(&resolved, &config_path, &out_dir, workers) {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", out_dir.join(f).display());
            }
            if report.degraded {
                eprintln!(
                    "warning: some estimates were degraded (replica caps or unreliable runs)"
                );
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
