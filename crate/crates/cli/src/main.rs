//! `mfsurrogate` command-line tool.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 rejected input (files,
//! config, model), 4 computation aborted (divergence, non-finite output).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfsurrogate::{Error, InterpMethod};

pub const EXIT_INVALID: u8 = 3;
pub const EXIT_ABORT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mfsurrogate",
    version,
    about = "Multi-fidelity neural surrogates for 2-D scalar fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample a high-fidelity field onto the low-fidelity nodes.
    Align {
        #[arg(long)]
        lf: PathBuf,
        #[arg(long)]
        hf: PathBuf,
        /// nearest, idw, or idw:<power>:<k>; overrides the config file.
        #[arg(long, value_parser = parse_method)]
        method: Option<InterpMethod>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write it as JSON plus a per-epoch loss CSV.
    Train {
        #[arg(long)]
        lf: PathBuf,
        /// Raw high-fidelity field; aligned with the configured method.
        #[arg(
            long,
            conflicts_with = "hf_aligned",
            required_unless_present = "hf_aligned"
        )]
        hf: Option<PathBuf>,
        /// High-fidelity values already on the low-fidelity nodes.
        #[arg(long)]
        hf_aligned: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (default: <out>.report.csv).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict the high-fidelity field on a node file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions with a reference field on its own nodes.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Paired comparison against a high-fidelity-only network on a
    /// synthetic problem, over seeds 0..N.
    Benchmark {
        #[arg(long, value_enum)]
        case: Case,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the comparison table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Case {
    Linear,
    Nonlinear,
}

fn parse_method(s: &str) -> Result<InterpMethod, String> {
    let m: InterpMethod = s.parse().map_err(|e: Error| e.to_string())?;
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

fn run(cli: Cli) -> mfsurrogate::Result<()> {
    match cli.command {
        Command::Align {
            lf,
            hf,
            method,
            config,
            out,
        } => commands::align(&lf, &hf, method, config.as_deref(), &out),
        Command::Train {
            lf,
            hf,
            hf_aligned,
            config,
            out,
            report,
            seed,
            epochs,
        } => {
            let hf = match (hf, hf_aligned) {
                (Some(raw), _) => commands::HfSource::Raw(raw),
                (None, Some(aligned)) => commands::HfSource::Aligned(aligned),
                (None, None) => unreachable!("clap requires one of --hf / --hf-aligned"),
            };
            let report = report.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".report.csv");
                p.into()
            });
            commands::train(&lf, &hf, config.as_deref(), &out, &report, seed, epochs)
        }
        Command::Predict {
            model,
            nodes,
            config,
            out,
        } => commands::predict(&model, &nodes, config.as_deref(), &out),
        Command::Evaluate {
            model,
            truth,
            config,
        } => commands::evaluate(&model, &truth, config.as_deref()),
        Command::Benchmark {
            case,
            seeds,
            config,
            out,
        } => commands::benchmark(case, seeds, config.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(if e.is_runtime_abort() {
                EXIT_ABORT
            } else {
                EXIT_INVALID
            })
        }
    }
}
