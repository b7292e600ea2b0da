use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regimix_cli::commands::{diagnose_text, format_ruin, format_stress, ruin_report, sample_text, stress_test};
use regimix_cli::data::parse_table;
use regimix_cli::error::write_text;
use regimix_cli::{load_model, load_plan, parse_control, parse_returns, run_pipeline, CliResult, ControlConfig};

#[derive(Parser)]
#[command(name = "regimix", version, about = "Fixed-marginal normal mixtures and retirement ruin analysis")]
struct Cli {
    /// Worker threads (overrides the control file).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit marginals, structure LPs and the joint mixture.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw returns from a saved model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Simulate a decumulation plan against a saved model.
    Ruin {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add extreme events to the data, refit, and compare ruin.
    Stress {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rows of returns to append.
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serial-correlation diagnostics per column.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        max_lag: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_control(path: &Path, seed: Option<u64>, threads: Option<usize>) -> CliResult<ControlConfig> {
    let mut cfg = parse_control(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    if let Some(n) = cfg.threads {
        regimix::exec::set_threads(n)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let (Some(n), Command::Sample { .. } | Command::Ruin { .. } | Command::Diagnose { .. }) = (cli.threads, &cli.command) {
        regimix::exec::set_threads(n)?;
    }
    match cli.command {
        Command::Fit { config, data, out, seed } => {
            let cfg = load_control(&config, seed, cli.threads)?;
            let panel = parse_returns(&data, cfg.n_assets, cfg.n_timepoints)?;
            let report = run_pipeline(&cfg, &panel, &out)?;
            println!("best log-likelihood {}", report.best_log_likelihood);
            Ok(())
        }
        Command::Sample { model, out, count, seed } => write_text(&out, &sample_text(&load_model(&model)?, count, seed)?),
        Command::Ruin { model, plan, paths, seed, out } => {
            let report = ruin_report(&load_model(&model)?, &load_plan(&plan)?, paths, seed)?;
            emit(out.as_deref(), &format_ruin(&report))
        }
        Command::Stress {
            config,
            data,
            events,
            plan,
            paths,
            seed,
            out,
        } => {
            let cfg = load_control(&config, seed, cli.threads)?;
            let panel = parse_returns(&data, cfg.n_assets, cfg.n_timepoints)?;
            let events = parse_table(&events)?;
            let outcome = stress_test(&cfg, &panel, &events, &load_plan(&plan)?, paths)?;
            emit(out.as_deref(), &format_stress(&outcome, events.len()))
        }
        Command::Diagnose { data, max_lag, out } => emit(out.as_deref(), &diagnose_text(&parse_table(&data)?, max_lag)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
