//! `simplex-diffusion` binary: see each subcommand's help for flags.

use clap::{Parser, Subcommand};
use simplex_diffusion_cli::commands;
use simplex_diffusion_cli::config::RunConfig;
use simplex_diffusion_cli::exit_code;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "simplex-diffusion",
    about = "Score-based diffusion toolkit for categorical data",
    version
)]
struct Cli {
    /// Worker threads for sampling, solving, and dictionary building.
    /// Outputs are identical for every thread count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the forward-sample dictionary file.
    Presample {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the score model; writes a checkpoint and loss history.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate discrete samples with the reverse-time sampler.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Number of samples (overrides the config).
        #[arg(long)]
        count: Option<usize>,
        /// Time-dilation factor c >= 1 (overrides the config).
        #[arg(long)]
        dilation: Option<f64>,
        /// Fraction of reverse time before dilation engages.
        #[arg(long = "dilation-start")]
        dilation_start: Option<f64>,
        /// Output file (default: samples.txt in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Complete puzzles by clamping clues and re-sampling until valid.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Puzzle file: blank-line-separated 4x4 digit grids, 0 = blank.
        puzzles: PathBuf,
        /// Output file (default: solutions.txt in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evidence-lower-bound table (bits/dim) for a sequence file.
    Elbo {
        #[arg(long)]
        config: PathBuf,
        /// Sequence file in the sample output format.
        data: PathBuf,
        /// Output file (default: elbo.csv in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical invariant suite and write its report.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: check_report.csv in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems are config errors
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let threads = cli.threads.max(1);
    let result = (|| -> simplex_diffusion::error::Result<bool> {
        match cli.cmd {
            Cmd::Presample { config } => {
                let cfg = RunConfig::load(&config)?;
                commands::presample::run(&cfg, threads)?;
                Ok(true)
            }
            Cmd::Train { config } => {
                let cfg = RunConfig::load(&config)?;
                commands::train::run(&cfg)?;
                Ok(true)
            }
            Cmd::Sample { config, count, dilation, dilation_start, out } => {
                let mut cfg = RunConfig::load(&config)?;
                if let Some(n) = count {
                    cfg.sampler.count = n;
                }
                if let Some(c) = dilation {
                    cfg.sampler.dilation = c;
                }
                if let Some(f) = dilation_start {
                    cfg.sampler.dilation_start = f;
                }
                commands::sample::run(&cfg, threads, out)?;
                Ok(true)
            }
            Cmd::Solve { config, puzzles, out } => {
                let cfg = RunConfig::load(&config)?;
                commands::solve::run(&cfg, &puzzles, threads, out)?;
                Ok(true)
            }
            Cmd::Elbo { config, data, out } => {
                let cfg = RunConfig::load(&config)?;
                commands::elbo::run(&cfg, &data, threads, out)?;
                Ok(true)
            }
            Cmd::Check { config, out } => {
                let cfg = RunConfig::load(&config)?;
                commands::check::run(&cfg, out)
            }
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
