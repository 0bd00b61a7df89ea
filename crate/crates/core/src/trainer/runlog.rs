use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::format_float;
use crate::metrics::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Main,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupWeight {
    pub y: usize,
    pub a: usize,
    pub count: usize,
    pub mean_weight: f64,
}

/// Range of committee-member accuracies on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Iterations completed so far, warm-up included.
    pub iterations: usize,
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
    /// Unbiased validation accuracy across committee members.
    pub committee_unbiased: Option<Spread>,
    pub mean_weight_conflicting: Option<f64>,
    pub mean_weight_guiding: Option<f64>,
    pub enrichment: Option<f64>,
    pub weights_by_group: Vec<GroupWeight>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_float)
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-epoch metrics table. Wall-clock time is left out so the file is
    /// byte-identical across repeated runs.
    pub fn to_metrics_csv(&self) -> String {
        let mut out = String::from("epoch,phase,iterations");
        for split in ["train", "val", "test"] {
            for m in MetricsReport::METRIC_NAMES {
                let _ = write!(out, ",{split}_{m}");
            }
        }
        out.push_str(
            ",committee_unbiased_mean,committee_unbiased_min,committee_unbiased_max,\
             mean_weight_conflicting,mean_weight_guiding,enrichment\n",
        );
        for r in &self.records {
            let phase = match r.phase {
                Phase::Warmup => "warmup",
                Phase::Main => "main",
            };
            let _ = write!(out, "{},{phase},{}", r.epoch, r.iterations);
            for report in [Some(&r.train), Some(&r.val), r.test.as_ref()] {
                for m in MetricsReport::METRIC_NAMES {
                    out.push(',');
                    out.push_str(&opt(report.and_then(|rep| rep.get(m))));
                }
            }
            let c = r.committee_unbiased;
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{}",
                opt(c.map(|s| s.mean)),
                opt(c.map(|s| s.min)),
                opt(c.map(|s| s.max)),
                opt(r.mean_weight_conflicting),
                opt(r.mean_weight_guiding),
                opt(r.enrichment)
            );
        }
        out
    }

    /// `epoch,y,a,count,mean_weight` rows for every epoch that produced
    /// sample weights.
    pub fn to_weights_csv(&self) -> String {
        let mut out = String::from("epoch,y,a,count,mean_weight\n");
        for r in &self.records {
            for g in &r.weights_by_group {
                let _ = writeln!(out, "{},{},{},{},{}", r.epoch, g.y, g.a, g.count, format_float(g.mean_weight));
            }
        }
        out
    }

    /// `epoch,wall_clock_secs`.
    pub fn to_timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_clock_secs\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.6}", r.epoch, r.wall_clock_secs);
        }
        out
    }
}
