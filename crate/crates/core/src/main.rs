use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lth::harness::{self, ExperimentConfig, RunOutcome, RunStatus};
use lth::metrics::summarize;
use lth::Result;

#[derive(Parser)]
#[command(name = "lth", version, about = "Lottery-ticket pruning with calibration-aware training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative pruning loop described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain the tickets of a finished run on another dataset.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Redraw surviving weights instead of using the source initialisation.
        #[arg(long)]
        random_ticket: bool,
    },
    /// Print accuracy, ECE, mean NLL and Brier score of a prediction dump.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = lth::metrics::DEFAULT_ECE_BINS)]
        bins: usize,
    },
    /// Draw accuracy, ECE, NLL and Brier charts from one or more ledgers.
    Plot {
        #[arg(long = "ledger", required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn report(outcome: &RunOutcome) {
    println!(
        "wrote {} ledger rows to {}",
        outcome.ledger.len(),
        harness::ledger_path(&outcome.output_dir).display()
    );
    if let RunStatus::Exhausted { iteration, reason } = &outcome.status {
        eprintln!("warning: pruning stopped before iteration {iteration}: {reason}");
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            report(&harness::run_lth(&cfg)?);
        }
        Command::Transfer {
            source,
            config,
            random_ticket,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            report(&harness::run_transfer(&source, &cfg, random_ticket)?);
        }
        Command::Metrics { pred, bins } => {
            if bins == 0 {
                return Err(lth::Error::Config("--bins must be >= 1".into()));
            }
            let preds = harness::read_predictions(&pred)?;
            let m = summarize(&preds, bins);
            println!("accuracy,ece,nll_mean,brier");
            println!("{:.6},{:.6},{:.6},{:.6}", m.accuracy, m.ece, m.nll_mean, m.brier);
        }
        Command::Plot { ledgers, out } => {
            for p in harness::emit_plots(&ledgers, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
