use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relocl::commands::{self, TrainRequest};
use relocl::config::{ExperimentConfig, ReportFormat};
use relocl::{fsutil, report, Result};
use relocl_core::experiment::Strategy;

/// Continual learning of household object relocations.
#[derive(Parser, Debug)]
#[command(name = "relocl", version, about)]
struct Cli {
    /// TOML experiment configuration; every key can also be set through
    /// `RELOCL_<SECTION>_<KEY>` environment variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured households into JSON-lines datasets.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train session by session, one dataset per session, in the given order.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Train this seed only instead of every configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run stored in this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score checkpoints (files or run directories) on the test partitions.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        delta: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the retention tables.
        #[arg(long)]
        table: bool,
    },
    /// Summarize a metrics file and session ledgers as text.
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        ledger: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projected rehearsal buffer size per session as CSV plot data.
    ProjectBuffer {
        #[arg(long)]
        mean_size: f64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 10)]
        sessions: usize,
        /// Ledger whose measured buffer sizes are added as a column.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relocl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fsutil::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { out, seed } => {
            if let Some(s) = seed {
                cfg.simulator.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.output.directory.join("data"));
            for p in commands::simulate(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            datasets,
            strategy,
            seed,
            delta,
            out,
            resume,
        } => {
            if let Some(d) = delta {
                cfg.model.delta = d;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.output.directory.clone());
            let req = TrainRequest {
                config: &cfg,
                datasets: &datasets,
                strategy: strategy.unwrap_or(cfg.training.strategy),
                seeds: seed.map_or_else(|| cfg.training.seeds.clone(), |s| vec![s]),
                out: &out,
                resume: resume.as_deref(),
            };
            for dir in commands::train(&req)? {
                println!("{}", dir.display());
            }
        }
        Command::Evaluate {
            checkpoints,
            datasets,
            delta,
            out,
            table,
        } => {
            let metrics = commands::evaluate_checkpoints(&checkpoints, &datasets, delta)?;
            let out = out.unwrap_or_else(|| cfg.output.directory.clone());
            for p in commands::write_metrics(&metrics, &out, &cfg.output.formats)? {
                println!("{}", p.display());
            }
            if table || cfg.output.formats.contains(&ReportFormat::Table) {
                print!("{}", report::summary_text(&metrics.rows));
            }
        }
        Command::Report {
            metrics,
            ledger,
            out,
        } => {
            let text = commands::report_text(metrics.as_deref(), &ledger)?;
            emit(out.as_ref(), &text)?;
        }
        Command::ProjectBuffer {
            mean_size,
            beta,
            sessions,
            ledger,
            out,
        } => {
            let beta = beta.unwrap_or(cfg.training.beta);
            let csv = commands::project_buffer(mean_size, beta, sessions, ledger.as_deref())?;
            emit(out.as_ref(), &csv)?;
        }
    }
    Ok(())
}
