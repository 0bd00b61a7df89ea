//! One-dimensional sweeps over a config axis with repeated seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use lwbc_core::datagen::format_float;
use lwbc_core::{Method, MetricsReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::run::{self, Summary};

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const THREADS_ENV: &str = "LWBC_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rho,
    M,
    Lambda,
    Method,
    Seed,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "rho" => Axis::Rho,
            "m" => Axis::M,
            "lambda" => Axis::Lambda,
            "method" => Axis::Method,
            "seed" => Axis::Seed,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown sweep axis {s:?} (expected rho, m, lambda, method or seed)"
                )))
            }
        })
    }
}

fn parse<T: FromStr>(axis: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse {value:?} as a value of {axis}")))
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::M => "m",
            Axis::Lambda => "lambda",
            Axis::Method => "method",
            Axis::Seed => "seed",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> CliResult<ExperimentConfig> {
        let mut c = base.clone();
        let name = self.name();
        match self {
            Axis::Rho => c.data.rho = parse(name, value)?,
            Axis::M => c.train.m = parse(name, value)?,
            Axis::Lambda => c.train.lambda = parse(name, value)?,
            Axis::Method => c.train.method = value.parse::<Method>()?,
            Axis::Seed => c.train.seed = parse(name, value)?,
        }
        Ok(c)
    }
}

/// Number of concurrent runs from `LWBC_THREADS` (default 1).
pub fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v:?} must be a positive integer"))),
        },
    }
}

pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<String>,
    pub repeats: usize,
}

struct Job {
    value: usize,
    config: ExperimentConfig,
    dir: PathBuf,
}

impl SweepPlan {
    fn jobs(&self, base: &ExperimentConfig, out: &Path) -> CliResult<Vec<Job>> {
        if self.values.is_empty() {
            return Err(CliError::Config("--values must list at least one value".into()));
        }
        if self.repeats == 0 {
            return Err(CliError::Config("--repeats must be at least 1".into()));
        }
        let mut jobs = Vec::new();
        for (vi, value) in self.values.iter().enumerate() {
            let at_value = self.axis.apply(base, value)?;
            for r in 0..self.repeats {
                let mut config = at_value.clone();
                config.train.seed = at_value.train.seed.wrapping_add(r as u64);
                config.validate()?;
                let dir = out
                    .join(format!("{}_{}", self.axis.name(), value))
                    .join(format!("seed_{}", config.train.seed));
                jobs.push(Job {
                    value: vi,
                    config,
                    dir,
                });
            }
        }
        Ok(jobs)
    }
}

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// `axis_value,metric,mean,std` over the test metrics of each run's
/// selected checkpoint. `std` is the sample standard deviation, `NA` for a
/// single run.
pub fn aggregate_csv(values: &[String], summaries: &[Vec<Summary>]) -> String {
    let mut out = String::from("axis_value,metric,mean,std\n");
    for (value, runs) in values.iter().zip(summaries) {
        if runs.is_empty() {
            continue;
        }
        for metric in MetricsReport::METRIC_NAMES {
            let xs: Vec<f64> = runs.iter().filter_map(|s| s.best.test.get(metric)).collect();
            if xs.is_empty() {
                continue;
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let std = sample_std(&xs).map_or_else(|| "NA".to_string(), format_float);
            let _ = writeln!(out, "{value},{metric},{},{std}", format_float(mean));
        }
    }
    out
}

/// Runs every (value, repeat) pair with at most `threads` runs at a time.
/// On the first failure no further runs start; finished run directories
/// are kept and the aggregate covers the values whose repeats all
/// completed.
pub fn execute(
    base: &ExperimentConfig,
    plan: &SweepPlan,
    data: Option<&Path>,
    out: &Path,
    threads: usize,
) -> CliResult<Vec<Vec<Summary>>> {
    let jobs = plan.jobs(base, out)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out.display(), e))?;
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<CliResult<Summary>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run::execute(&job.config, data, &job.dir).map(|a| a.summary);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                if let Ok(mut slots) = results.lock() {
                    slots[i] = Some(r);
                }
            });
        }
    });
    let slots = results.into_inner().map_err(|_| CliError::Io("sweep worker panicked".into()))?;

    let mut by_value: Vec<Vec<Summary>> = vec![Vec::new(); plan.values.len()];
    let mut complete = vec![true; plan.values.len()];
    let mut first_error = None;
    for (job, slot) in jobs.iter().zip(slots) {
        match slot {
            Some(Ok(summary)) => by_value[job.value].push(summary),
            Some(Err(e)) => {
                complete[job.value] = false;
                first_error.get_or_insert(e);
            }
            None => complete[job.value] = false,
        }
    }
    for (runs, ok) in by_value.iter_mut().zip(&complete) {
        if !ok {
            runs.clear();
        }
    }
    let path = out.join(AGGREGATE_CSV);
    fs::write(&path, aggregate_csv(&plan.values, &by_value)).map_err(|e| CliError::io(path.display(), e))?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(by_value),
    }
}
