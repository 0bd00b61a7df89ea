use serde::{Deserialize, Serialize};

use crate::classifier::Reduction;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain mean cross-entropy.
    Erm,
    /// ERM, then retrain with a fixed upweight on the samples it gets wrong.
    SingleReweight,
    /// Short identification run, then retrain with its error set upweighted.
    JttLike,
    /// Committee weighting without distillation into the committee.
    LwbcNokd,
    /// Committee weighting with distillation from the main classifier.
    Lwbc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Erm,
        Method::SingleReweight,
        Method::JttLike,
        Method::LwbcNokd,
        Method::Lwbc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::SingleReweight => "single_reweight",
            Method::JttLike => "jtt_like",
            Method::LwbcNokd => "lwbc_nokd",
            Method::Lwbc => "lwbc",
        }
    }

    pub fn uses_committee(self) -> bool {
        matches!(self, Method::Lwbc | Method::LwbcNokd)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of a training run. Schedules are given in epochs; the
/// trainer converts them to iterations over a shared minibatch stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    /// Committee size.
    pub m: usize,
    pub subset_size: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Total epochs, warm-up included.
    pub epochs: usize,
    /// Caps the run at this many iterations in total. The last epoch may
    /// then be partial; it is still logged.
    pub iterations: Option<usize>,
    pub warmup_epochs: usize,
    /// Epochs of main-classifier training before distillation starts.
    pub kd_delay_epochs: usize,
    pub seed: u64,
    pub selection_metric: String,
    pub raw_sum_losses: bool,
    pub single_upweight: f64,
    pub jtt_epoch: usize,
    pub jtt_upweight: f64,
    pub hidden: usize,
    /// Draw subset indices with replacement (duplicates allowed).
    pub subset_with_replacement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Lwbc,
            lr: 1e-3,
            batch_size: 64,
            m: 30,
            subset_size: 200,
            alpha: 0.02,
            lambda: 0.6,
            tau: 1.0,
            epochs: 30,
            iterations: None,
            warmup_epochs: 3,
            kd_delay_epochs: 1,
            seed: 0,
            selection_metric: "conflicting".into(),
            raw_sum_losses: false,
            single_upweight: 50.0,
            jtt_epoch: 10,
            jtt_upweight: 20.0,
            hidden: 16,
            subset_with_replacement: true,
        }
    }
}

impl TrainConfig {
    pub fn with_method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    pub fn reduction(&self) -> Reduction {
        if self.raw_sum_losses {
            Reduction::Sum
        } else {
            Reduction::Mean
        }
    }

    /// Epochs to run and the iteration cap for a training set of `n`
    /// samples.
    pub fn schedule(&self, n: usize) -> (usize, usize) {
        let steps = n.div_ceil(self.batch_size).max(1);
        match self.iterations {
            Some(t) => (t.div_ceil(steps), t),
            None => (self.epochs, self.epochs * steps),
        }
    }

    /// Checks the schedule against a training set of `n` samples.
    pub fn validate_schedule(&self, n: usize) -> Result<()> {
        let steps = n.div_ceil(self.batch_size).max(1);
        let (_, t) = self.schedule(n);
        if self.method.uses_committee() && self.warmup_epochs * steps >= t {
            return Err(Error::invalid(
                "warmup_epochs",
                format!("{} warm-up iterations leave none of the {t} total", self.warmup_epochs * steps),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("single_upweight", self.single_upweight),
            ("jtt_upweight", self.jtt_upweight),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive and finite")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("m", self.m),
            ("subset_size", self.subset_size),
            ("epochs", self.epochs),
            ("jtt_epoch", self.jtt_epoch),
            ("hidden", self.hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.iterations == Some(0) {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", format!("{} must lie in [0, 1]", self.lambda)));
        }
        if self.iterations.is_none() && self.method.uses_committee() && self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(
                "warmup_epochs",
                format!("{} must be smaller than epochs={}", self.warmup_epochs, self.epochs),
            ));
        }
        if !MetricsReport::METRIC_NAMES.contains(&self.selection_metric.as_str())
            && !matches!(self.selection_metric.as_str(), "validation" | "accuracy")
        {
            return Err(Error::invalid(
                "selection_metric",
                format!("unknown metric {:?}", self.selection_metric),
            ));
        }
        Ok(())
    }
}
