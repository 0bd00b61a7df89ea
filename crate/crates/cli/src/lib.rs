//! Command-line experiment runner for committee-weighted debiasing.
//!
//! Subcommands: `run`, `sweep`, `gradcheck` and `gen-data`. Exit codes are
//! 0 on success, 1 when a check fails, 2 for configuration or usage errors
//! and 3 for I/O errors.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod json;
pub mod run;
pub mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use lwbc_core::gradcheck::Fault;
use lwbc_core::trainer::streams;
use lwbc_core::{datagen, Method, RngStream};

use config::ExperimentConfig;
use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lwbc", version, about = "Debiased training with a biased committee")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config; fields not given keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config method.
    #[arg(long)]
    pub method: Option<String>,
    /// Training set CSV (with its `.spec.json` sidecar) instead of generated data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InjectedFault {
    KdSignFlip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write its metrics and diagnostics.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat runs over values of one config field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of rho, m, lambda, method, seed.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Runs per value, with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<InjectedFault>,
    },
    /// Write a synthetic training set as CSV plus a spec sidecar.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(method) = &common.method {
        config.train.method = method.parse::<Method>()?;
    }
    config.validate()?;
    Ok(config)
}

fn gen_data(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    rho: Option<f64>,
    n: Option<usize>,
) -> CliResult<()> {
    let config = load_config(config)?;
    let mut spec = config.data.clone();
    if let Some(rho) = rho {
        spec.rho = rho;
    }
    if let Some(n) = n {
        spec.n = n;
    }
    spec.validate()?;
    let seed = seed.unwrap_or(config.train.seed);
    let data = datagen::generate(&spec, &mut RngStream::new(seed, streams::DATA_TRAIN))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    data.export_csv(out).map_err(|e| CliError::io(out.display(), e))?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { common } => {
            let config = resolve(&common)?;
            let out = common.out.clone().unwrap_or_else(|| run::default_out_dir(&config));
            let art = run::execute(&config, common.data.as_deref(), &out)?;
            println!(
                "{} seed {}: best epoch {}, test worst-group {:.4}, outputs in {}",
                art.summary.method,
                art.summary.seed,
                art.summary.best_epoch,
                art.summary.worst_group,
                out.display()
            );
            Ok(())
        }
        Command::Sweep {
            common,
            axis,
            values,
            repeats,
        } => {
            let config = resolve(&common)?;
            let plan = sweep::SweepPlan {
                axis: axis.parse()?,
                values,
                repeats,
            };
            let threads = sweep::thread_count()?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from(format!("sweeps/{axis}")));
            let runs = sweep::execute(&config, &plan, common.data.as_deref(), &out, threads)?;
            println!(
                "{} runs over {} values, aggregate in {}",
                runs.iter().map(Vec::len).sum::<usize>(),
                runs.len(),
                out.join(sweep::AGGREGATE_CSV).display()
            );
            Ok(())
        }
        Command::Gradcheck { inject_fault } => {
            let fault = match inject_fault {
                Some(InjectedFault::KdSignFlip) => Fault::KdSignFlip,
                None => Fault::None,
            };
            gradcheck::execute(fault).map(|_| ())
        }
        Command::GenData {
            config,
            seed,
            out,
            rho,
            n,
        } => gen_data(config.as_deref(), seed, &out, rho, n),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
