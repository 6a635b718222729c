//! `gmmd` command line: training, evaluation, dataset audits, bound checks,
//! hyperparameter sweeps, ablations and similarity dumps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmmd::data::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "gmmd", version, about = "Fairness-aware graph message passing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for training and instance generation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train `repetitions` seeded runs and write per-epoch and summary CSVs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved model on the validation and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Path to a `model.json` written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Print dataset statistics: size, group balance, homophily and feature MMD.
    Audit {
        #[command(flatten)]
        common: Common,
    },
    /// Check both parity bounds on random instances; exits 4 on any violation.
    TheoryCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train every point of the `sweep.*` grids.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and its ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ablations to run.
        #[arg(long, value_delimiter = ',', default_value = "none,no_fair,no_smooth,no_both,no_sample")]
        variants: Vec<String>,
    },
    /// Write kernel similarities of cross-group node pairs at the penultimate layer.
    DumpSim {
        #[command(flatten)]
        common: Common,
        /// Saved model to use; a fresh run is trained when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Eval { common, .. }
            | Command::Audit { common }
            | Command::TheoryCheck { common }
            | Command::Sweep { common }
            | Command::Ablate { common, .. }
            | Command::DumpSim { common, .. } => common,
        }
    }
}

/// Failure categories, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
    Violation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Violation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) | CliError::Violation(m) => m,
        }
    }
}

impl From<gmmd::Error> for CliError {
    fn from(e: gmmd::Error) -> Self {
        use gmmd::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Sample(_) => CliError::Usage(msg),
            E::Shape { .. } | E::NonFinite(_) | E::Undefined(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.set)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.theory.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(cli.command.common())?;
    match &cli.command {
        Command::Train { .. } => commands::train(&cfg),
        Command::Eval { model, .. } => commands::eval(&cfg, model),
        Command::Audit { .. } => commands::audit(&cfg),
        Command::TheoryCheck { .. } => commands::theory_check(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Ablate { variants, .. } => commands::ablate(&cfg, variants),
        Command::DumpSim { model, .. } => commands::dump_sim(&cfg, model.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
