use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metacomm::harness::{self, gradcheck::Scale, CurveTable, ExperimentConfig};
use metacomm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "metacomm",
    version,
    about = "Meta-learning for few-pilot demodulation and autoencoder links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Toggle first-order meta-gradients
    #[arg(long)]
    first_order: bool,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train and write the meta-loss history
    MetaTrain {
        #[command(flatten)]
        common: Common,
        /// Also save the learned initialization (first seed) here
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// SER against pilot count (demod profile)
    SweepPilots {
        #[command(flatten)]
        common: Common,
    },
    /// BLER against adaptation iterations (autoencoder profile)
    SweepAdapt {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference and closed-form checks of the meta-gradient engine
    Gradcheck {
        #[arg(long, default_value = "small")]
        scale: Scale,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Adapt a saved initialization on fresh tasks
    Eval {
        #[command(flatten)]
        common: Common,
        /// Initialization written by `meta-train --params`
        #[arg(long)]
        params: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::config("--config <path> is required"))?;
    let mut cfg = harness::load_config(path)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if common.first_order {
        cfg.train.first_order = !cfg.train.first_order;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: &CurveTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => harness::write_curve(table, path),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MetaTrain { common, params } => {
            let cfg = load(&common)?;
            let (table, theta) = harness::with_workers(common.workers, || harness::run_meta_train(&cfg))??;
            if let Some(path) = params {
                harness::save_params(&path, cfg.profile, &theta)?;
            }
            emit(&table, common.out.as_deref())
        }
        Command::SweepPilots { common } => {
            let cfg = load(&common)?;
            let sweep = harness::with_workers(common.workers, || harness::sweep_pilots(&cfg))??;
            emit(&sweep.table, common.out.as_deref())
        }
        Command::SweepAdapt { common } => {
            let cfg = load(&common)?;
            let sweep = harness::with_workers(common.workers, || harness::sweep_adaptation(&cfg))??;
            emit(&sweep.table, common.out.as_deref())
        }
        Command::Gradcheck { scale, workers } => {
            let report = harness::with_workers(workers, || harness::run_gradcheck(scale))??;
            println!("{report}");
            report.into_result().map(|_| ())
        }
        Command::Eval { common, params } => {
            let cfg = load(&common)?;
            let (profile, theta) = harness::load_params(&params)?;
            if profile != cfg.profile {
                return Err(Error::config(format!(
                    "parameters were trained for `{}`, config is `{}`",
                    profile.as_str(),
                    cfg.profile.as_str()
                )));
            }
            let table = harness::with_workers(common.workers, || harness::evaluate_initialization(&cfg, &theta))??;
            emit(&table, common.out.as_deref())
        }
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
