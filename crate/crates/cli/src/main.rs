//! Command-line experiment driver.

mod check;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ivpinn", version, about = "Interpolated VPINN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the file and IVPINN_OUT.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List the built-in test cases.
    ListCases,
    /// Run the data and discretization self-tests.
    Check,
}

const DESCRIPTIONS: [(&str, &str); 5] = [
    ("smooth", "variable coefficients, Dirichlet left/right, Neumann top/bottom, smooth solution"),
    ("corner", "convection-reaction, all Dirichlet, r^(2/3) corner singularity at the origin"),
    ("zero-1d", "-u'' = 0 on (0, 1), zero boundary values"),
    ("zero-2d", "-Laplace u = 0 on the unit square, zero boundary values"),
    ("parametric", "nonlinear reaction 4 exp(-p u^2), p in [0.5, 2]"),
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListCases => {
            for (name, what) in DESCRIPTIONS {
                println!("{name:<12} {what}");
            }
            ExitCode::SUCCESS
        }
        Command::Check => {
            if check::run_checks() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Run { config, out_dir } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = out_dir
                .or_else(|| cfg.output_dir.clone())
                .or_else(|| std::env::var_os("IVPINN_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            match run::run(&cfg, &out) {
                Ok(outcome) if outcome.failures.is_empty() => {
                    for f in &outcome.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Ok(outcome) => {
                    eprintln!("{} row(s) failed", outcome.failures.len());
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("cannot write to {}: {e}", out.display());
                    ExitCode::from(1)
                }
            }
        }
    }
}
