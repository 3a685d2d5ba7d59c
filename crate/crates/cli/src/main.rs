//! `gcos`: pre-train a GNN supernet, co-search networks and accelerators,
//! simulate and fine-tune the results.

mod commands;
mod config;
mod data;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::RunConfig;

/// A configuration or input the user has to fix; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "gcos", version, about = "GNN and accelerator co-search")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a configuration field, e.g. `--set search.pool_capacity=50`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Concurrent candidate evaluations during search.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the shared supernet weights and write a checkpoint.
    Pretrain {
        /// Checkpoint path; `<output_dir>/supernet.json` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the evolutionary co-search and fine-tune the best design.
    Search {
        /// Supernet checkpoint; `<output_dir>/supernet.json` by default.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a saved search state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Skip fine-tuning the best candidate.
        #[arg(long)]
        no_finetune: bool,
    },
    /// Simulate one network on one accelerator configuration.
    Simulate {
        #[arg(long)]
        subnet: PathBuf,
        /// Accelerator configuration; an even split in mode (0, 0) when omitted.
        #[arg(long)]
        accel: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one network from scratch and report its accuracy.
    Finetune {
        /// Network to train; a 16-wide two-layer GCN when omitted.
        #[arg(long)]
        subnet: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the matrix products a network lowers to.
    Workload {
        #[command(subcommand)]
        action: WorkloadAction,
    },
    /// Post-process search results.
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Inspect the effective configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum WorkloadAction {
    Dump {
        #[arg(long)]
        subnet: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ReportAction {
    /// Non-dominated (accuracy, latency) candidates as CSV.
    Pareto {
        /// `top.json`, `pool.json` or a JSON list of candidates.
        #[arg(long)]
        input: PathBuf,
        /// Destination; standard output when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the configuration after defaults and overrides.
    Dump,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, std::env::var("GCOS_SEED").ok())?;
    if let Some(w) = cli.workers {
        cfg.search.workers = w;
    }
    match cli.command {
        Command::Pretrain { out } => commands::pretrain(&cfg, out),
        Command::Search {
            checkpoint,
            resume,
            no_finetune,
        } => commands::search(&cfg, checkpoint, resume, no_finetune),
        Command::Simulate { subnet, accel, out } => commands::simulate(&cfg, &subnet, accel.as_deref(), out),
        Command::Finetune { subnet, out } => commands::finetune(&cfg, subnet.as_deref(), out),
        Command::Workload {
            action: WorkloadAction::Dump { subnet, out },
        } => commands::workload_dump(&cfg, &subnet, out.as_deref()),
        Command::Report {
            action: ReportAction::Pareto { input, csv },
        } => commands::report_pareto(&input, csv.as_deref()),
        Command::Config {
            action: ConfigAction::Dump,
        } => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

/// 2 for validation failures, 3 for unreadable or malformed inputs.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gcos_core::Error>() {
            if e.is_validation() {
                return 2;
            }
            if e.is_io_or_format() {
                return 3;
            }
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
