//! A single training run and its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lwbc_core::datagen::format_float;
use lwbc_core::metrics::curve_to_csv;
use lwbc_core::trainer::{
    self, committee_snapshot, error_set_snapshot, CommitteeSnapshot, ErrorSetSnapshot, Splits, TrainOutcome,
};
use lwbc_core::{ClassifierState, Dataset, Method, MetricsReport};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{build_data, ExperimentConfig, RunData};
use crate::error::{CliError, CliResult};
use crate::json;

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const WEIGHTS_CSV: &str = "weights_hist.csv";
pub const CURVE_CSV: &str = "consensus_curve.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const TIMING_CSV: &str = "timing.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

pub fn version() -> String {
    format!("lwbc v{}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitMetrics {
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub version: String,
    pub method: Method,
    pub seed: u64,
    pub selection_metric: String,
    pub best_epoch: usize,
    pub epochs_logged: usize,
    /// Test worst-group accuracy of the selected checkpoint.
    pub worst_group: f64,
    pub best: SplitMetrics,
    #[serde(rename = "final")]
    pub last: SplitMetrics,
    pub config: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub committee_after_warmup: Option<CommitteeSnapshot>,
    pub committee_final: Option<CommitteeSnapshot>,
    pub error_set: Option<ErrorSetSnapshot>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// SHA-256 of the training set's CSV export.
    pub fingerprint: String,
    pub val_fingerprint: String,
    pub test_fingerprint: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub method: Method,
    pub config: Value,
    pub dataset: DatasetInfo,
    pub outputs: Vec<String>,
}

/// Everything a run produced, kept in memory for callers such as sweeps.
pub struct RunArtifacts {
    pub summary: Summary,
    pub diagnostics: Diagnostics,
    pub outcome: TrainOutcome,
    pub data: RunData,
}

fn evaluate_pair(state: &ClassifierState, data: &RunData) -> CliResult<SplitMetrics> {
    let counts = data.train.group_counts();
    Ok(SplitMetrics {
        val: trainer::evaluate(state, &data.val, counts)?,
        test: trainer::evaluate(state, &data.test, counts)?,
    })
}

fn predictions_csv(state: &ClassifierState, data: &RunData) -> CliResult<String> {
    let mut out = String::from("split,idx,y,a,conflicting,pred\n");
    for (name, set) in [("val", &data.val), ("test", &data.test)] {
        let preds = state.predict(set.features())?;
        for (i, (s, p)) in set.samples().iter().zip(preds).enumerate() {
            let _ = writeln!(out, "{name},{i},{},{},{},{p}", s.label, s.bias, s.conflicting());
        }
    }
    Ok(out)
}

fn weights_of(config: &ExperimentConfig) -> f64 {
    match config.train.method {
        Method::JttLike => config.train.jtt_upweight,
        _ => config.train.single_upweight,
    }
}

/// Trains and measures without touching the file system.
pub fn train_run(config: &ExperimentConfig, data: RunData) -> CliResult<RunArtifacts> {
    let splits = Splits {
        train: &data.train,
        val: &data.val,
        test: Some(&data.test),
    };
    let outcome = trainer::train(&config.train, splits)?;
    let best = evaluate_pair(&outcome.best, &data)?;
    let last = evaluate_pair(&outcome.final_main, &data)?;
    let alpha = config.train.alpha;
    let snapshot = |c: Option<&lwbc_core::Committee>| {
        c.map(|c| committee_snapshot(c, &data.train, &data.val, alpha)).transpose()
    };
    let diagnostics = Diagnostics {
        committee_after_warmup: snapshot(outcome.warmup_committee.as_ref())?,
        committee_final: snapshot(outcome.committee.as_ref())?,
        error_set: outcome
            .upweighted
            .as_ref()
            .map(|flags| error_set_snapshot(flags, &data.train, weights_of(config))),
    };
    let summary = Summary {
        version: version(),
        method: config.train.method,
        seed: config.train.seed,
        selection_metric: config.train.selection_metric.clone(),
        best_epoch: outcome.best_epoch,
        epochs_logged: outcome.log.len(),
        worst_group: best.test.worst_group,
        best,
        last,
        config: config.to_value(),
    };
    Ok(RunArtifacts {
        summary,
        diagnostics,
        outcome,
        data,
    })
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(path.display(), e))?;
    written.push(name.to_string());
    Ok(())
}

fn fingerprint(d: &Dataset) -> String {
    sha256_hex(d.to_csv_string().as_bytes())
}

/// Writes every output file of a finished run into `out`.
pub fn write_outputs(art: &RunArtifacts, out: &Path, source: &str) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out.display(), e))?;
    let mut written = Vec::new();
    let log = &art.outcome.log;
    write(out, METRICS_CSV, &log.to_metrics_csv(), &mut written)?;
    write(out, SUMMARY_JSON, &json::to_string(&art.summary)?, &mut written)?;
    write(out, WEIGHTS_CSV, &log.to_weights_csv(), &mut written)?;
    let curve = art
        .diagnostics
        .committee_after_warmup
        .as_ref()
        .map_or_else(|| curve_to_csv(&[]), |s| curve_to_csv(&s.consensus_curve));
    write(out, CURVE_CSV, &curve, &mut written)?;
    write(out, PREDICTIONS_CSV, &predictions_csv(&art.outcome.best, &art.data)?, &mut written)?;
    write(out, DIAGNOSTICS_JSON, &json::to_string(&art.diagnostics)?, &mut written)?;
    write(out, BEST_CHECKPOINT, &art.outcome.best.to_checkpoint_json()?, &mut written)?;
    write(out, FINAL_CHECKPOINT, &art.outcome.final_main.to_checkpoint_json()?, &mut written)?;
    write(out, TIMING_CSV, &log.to_timing_csv(), &mut written)?;
    written.push(MANIFEST_JSON.to_string());
    let manifest = Manifest {
        version: version(),
        seed: art.summary.seed,
        method: art.summary.method,
        config: art.summary.config.clone(),
        dataset: DatasetInfo {
            source: source.to_string(),
            n_train: art.data.train.len(),
            n_val: art.data.val.len(),
            n_test: art.data.test.len(),
            fingerprint: fingerprint(&art.data.train),
            val_fingerprint: fingerprint(&art.data.val),
            test_fingerprint: fingerprint(&art.data.test),
        },
        outputs: written,
    };
    let path = out.join(MANIFEST_JSON);
    fs::write(&path, json::to_string(&manifest)?).map_err(|e| CliError::io(path.display(), e))?;
    Ok(())
}

/// Validates, builds data, trains and writes outputs.
pub fn execute(config: &ExperimentConfig, data: Option<&Path>, out: &Path) -> CliResult<RunArtifacts> {
    config.validate()?;
    let run_data = build_data(config, config.train.seed, data)?;
    config.train.validate_schedule(run_data.train.len())?;
    log::info!(
        "training {} (seed {}) on {} samples",
        config.train.method,
        config.train.seed,
        run_data.train.len()
    );
    let art = train_run(config, run_data)?;
    let source = data.map_or_else(|| "generated".to_string(), |p| p.display().to_string());
    write_outputs(&art, out, &source)?;
    log::info!(
        "best epoch {}: test worst-group {}",
        art.summary.best_epoch,
        format_float(art.summary.worst_group)
    );
    Ok(art)
}

pub fn default_out_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(format!("runs/{}-seed{}", config.train.method, config.train.seed))
}
