//! Training loops: the committee-weighted method and its baselines.
//!
//! Every method draws minibatches from the same epoch-indexed stream and
//! initializes the main classifier from the same stream, so methods that
//! coincide in their weights coincide bit for bit.

mod config;
mod diagnostics;
mod runlog;

use std::collections::BTreeMap;
use std::time::Instant;

use crate::classifier::Reduction;
use crate::committee::{weights_from_counts, Distill};
use crate::datagen::{bootstrap_subsets, minibatches, Dataset, Group};
use crate::error::{Error, Result};
use crate::metrics::{enrichment, metric_suite, MetricsReport};
use crate::numerics::RngStream;
use crate::{ClassifierState, Committee};

pub use config::{Method, TrainConfig};
pub use diagnostics::{committee_snapshot, error_set_snapshot, CommitteeSnapshot, ErrorSetSnapshot};
pub use runlog::{EpochRecord, GroupWeight, Phase, RunLog, Spread};

/// Stream ids under the run seed.
pub mod streams {
    pub const DATA_TRAIN: u64 = 1;
    pub const DATA_VAL: u64 = 2;
    pub const DATA_TEST: u64 = 3;
    pub const SUBSETS: u64 = 10;
    pub const MAIN_INIT: u64 = 11;
    pub const COMMITTEE_INIT: u64 = 12;
    pub const BATCHES: u64 = 13;
}

/// Data a run trains and evaluates on.
#[derive(Clone, Copy, Debug)]
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Main classifier at the selected epoch.
    pub best: ClassifierState,
    pub best_epoch: usize,
    pub final_main: ClassifierState,
    pub log: RunLog,
    pub committee: Option<Committee>,
    /// Committee right after warm-up.
    pub warmup_committee: Option<Committee>,
    /// Training samples upweighted by a two-stage baseline.
    pub upweighted: Option<Vec<bool>>,
}

/// Runs the method named in `config`.
pub fn train(config: &TrainConfig, splits: Splits<'_>) -> Result<TrainOutcome> {
    match config.method {
        Method::Erm => train_erm(config, splits),
        Method::SingleReweight => train_single_reweight(config, splits),
        Method::JttLike => train_jtt_like(config, splits),
        Method::Lwbc | Method::LwbcNokd => train_lwbc(config, splits),
    }
}

/// Metric suite of `state` on `dataset`, with in-distribution weights from
/// `train_group_counts`.
pub fn evaluate(
    state: &ClassifierState,
    dataset: &Dataset,
    train_group_counts: &BTreeMap<Group, usize>,
) -> Result<MetricsReport> {
    if state.d_in() != dataset.dim() {
        return Err(Error::shape(
            "evaluate",
            format!("classifier input {}", state.d_in()),
            format!("dataset features {}", dataset.dim()),
        ));
    }
    metric_suite(&state.predict(dataset.features())?, dataset, train_group_counts)
}

fn check_method(config: &TrainConfig, allowed: &[Method]) -> Result<()> {
    config.validate()?;
    if !allowed.contains(&config.method) {
        return Err(Error::invalid(
            "method",
            format!("{} cannot be trained by this routine", config.method),
        ));
    }
    Ok(())
}

fn check_splits(splits: &Splits<'_>) -> Result<()> {
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::invalid("splits", "train and validation sets must be non-empty"));
    }
    let dim = splits.train.dim();
    let others = [Some(splits.val), splits.test];
    if others.iter().flatten().any(|d| d.dim() != dim || d.classes() != splits.train.classes()) {
        return Err(Error::invalid("splits", "feature dimension or class count differs between splits"));
    }
    Ok(())
}

/// Accumulates the sample weights seen during one epoch.
#[derive(Default)]
struct WeightTally {
    weights: Vec<f64>,
    flags: Vec<bool>,
    by_group: BTreeMap<Group, (usize, f64)>,
}

impl WeightTally {
    fn add(&mut self, train: &Dataset, idx: &[usize], weights: &[f64]) {
        for (&i, &w) in idx.iter().zip(weights) {
            let s = &train.samples()[i];
            self.weights.push(w);
            self.flags.push(s.conflicting());
            let e = self.by_group.entry((s.label, s.bias)).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += w;
        }
    }

    fn summary(&self) -> (Option<f64>, Option<f64>, Option<f64>, Vec<GroupWeight>) {
        let mean_where = |want: bool| {
            let sel: Vec<f64> = self
                .weights
                .iter()
                .zip(&self.flags)
                .filter(|(_, &c)| c == want)
                .map(|(w, _)| *w)
                .collect();
            (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
        };
        let enr = enrichment(&self.weights, &self.flags).ok();
        let groups = self
            .by_group
            .iter()
            .map(|(&(y, a), &(count, sum))| GroupWeight {
                y,
                a,
                count,
                mean_weight: sum / count as f64,
            })
            .collect();
        (mean_where(true), mean_where(false), enr, groups)
    }
}

struct EpochContext<'a> {
    splits: Splits<'a>,
    started: Instant,
}

impl EpochContext<'_> {
    fn record(
        &self,
        epoch: usize,
        phase: Phase,
        iterations: usize,
        main: &ClassifierState,
        committee: Option<&Committee>,
        tally: Option<&WeightTally>,
    ) -> Result<EpochRecord> {
        let counts = self.splits.train.group_counts();
        let train = evaluate(main, self.splits.train, counts)?;
        let val = evaluate(main, self.splits.val, counts)?;
        let test = self.splits.test.map(|t| evaluate(main, t, counts)).transpose()?;
        let committee_unbiased = match committee {
            Some(c) => {
                let mut values = Vec::with_capacity(c.m());
                for member in c.members() {
                    if let Some(u) = evaluate(member, self.splits.val, counts)?.unbiased {
                        values.push(u);
                    }
                }
                Spread::of(&values)
            }
            None => None,
        };
        let (mean_weight_conflicting, mean_weight_guiding, enrichment, weights_by_group) =
            tally.map_or((None, None, None, Vec::new()), WeightTally::summary);
        Ok(EpochRecord {
            epoch,
            phase,
            iterations,
            train,
            val,
            test,
            committee_unbiased,
            mean_weight_conflicting,
            mean_weight_guiding,
            enrichment,
            weights_by_group,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// Tracks the best epoch by a validation metric; ties keep the earliest.
struct Selector<'a> {
    metric: &'a str,
    best: Option<(f64, usize, ClassifierState)>,
}

impl<'a> Selector<'a> {
    fn new(metric: &'a str) -> Self {
        Self { metric, best: None }
    }

    fn offer(&mut self, epoch: usize, val: &MetricsReport, state: &ClassifierState) {
        let score = val.get(self.metric).unwrap_or(f64::NEG_INFINITY);
        if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            self.best = Some((score, epoch, state.clone()));
        }
    }

    fn finish(self, fallback: &ClassifierState) -> (ClassifierState, usize) {
        match self.best {
            Some((_, epoch, state)) => (state, epoch),
            None => (fallback.clone(), 0),
        }
    }
}

fn init_main(config: &TrainConfig, train: &Dataset) -> Result<ClassifierState> {
    let mut rng = RngStream::new(config.seed, streams::MAIN_INIT);
    ClassifierState::init(train.dim(), config.hidden, train.classes(), &mut rng)
}

/// Trains one classifier by weighted cross-entropy for `epochs` epochs.
/// `weights[i]` applies to training sample `i`; `None` means all ones.
fn train_main_only(
    config: &TrainConfig,
    splits: Splits<'_>,
    epochs: usize,
    max_iterations: usize,
    weights: Option<&[f64]>,
) -> Result<(ClassifierState, usize, ClassifierState, RunLog)> {
    let train = splits.train;
    if let Some(w) = weights {
        if w.len() != train.len() {
            return Err(Error::shape(
                "sample weights",
                format!("{} weights", w.len()),
                format!("{} training samples", train.len()),
            ));
        }
    }
    let ctx = EpochContext {
        splits,
        started: Instant::now(),
    };
    let batch_rng = RngStream::new(config.seed, streams::BATCHES);
    let lr = config.lr;
    let reduction = config.reduction();
    let mut main = init_main(config, train)?;
    let mut log = RunLog::default();
    let mut selector = Selector::new(&config.selection_metric);
    let mut iterations = 0;
    for epoch in 0..epochs {
        let mut tally = WeightTally::default();
        for idx in minibatches(train.len(), config.batch_size, &batch_rng, epoch as u64)? {
            if iterations == max_iterations {
                break;
            }
            let x = train.batch_features(&idx)?;
            let y = train.batch_labels(&idx);
            let w: Vec<f64> = match weights {
                Some(all) => idx.iter().map(|&i| all[i]).collect(),
                None => vec![1.0; idx.len()],
            };
            let (g, _) = main.weighted_ce_backward(&x, &y, &w, reduction)?;
            main.adam_step(&g, lr)?;
            tally.add(train, &idx, &w);
            iterations += 1;
        }
        let rec = ctx.record(epoch, Phase::Main, iterations, &main, None, Some(&tally))?;
        selector.offer(epoch, &rec.val, &main);
        log.records.push(rec);
    }
    let (best, best_epoch) = selector.finish(&main);
    Ok((best, best_epoch, main, log))
}

/// Plain mean cross-entropy training.
pub fn train_erm(config: &TrainConfig, splits: Splits<'_>) -> Result<TrainOutcome> {
    check_method(config, &[Method::Erm])?;
    check_splits(&splits)?;
    let (epochs, t) = config.schedule(splits.train.len());
    let (best, best_epoch, final_main, log) = train_main_only(config, splits, epochs, t, None)?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_main,
        log,
        committee: None,
        warmup_committee: None,
        upweighted: None,
    })
}

/// Training samples `state` misclassifies.
pub fn error_set(state: &ClassifierState, train: &Dataset) -> Result<Vec<bool>> {
    let preds = state.predict(train.features())?;
    Ok(preds.iter().zip(train.samples()).map(|(p, s)| *p != s.label).collect())
}

/// `upweight` for flagged samples, 1 for the rest.
pub fn upweight_errors(flags: &[bool], upweight: f64) -> Vec<f64> {
    flags.iter().map(|&e| if e { upweight } else { 1.0 }).collect()
}

fn two_stage(config: &TrainConfig, splits: Splits<'_>, id_epochs: usize, upweight: f64) -> Result<TrainOutcome> {
    check_splits(&splits)?;
    let steps = splits.train.len().div_ceil(config.batch_size);
    let (_, _, identifier, _) = train_main_only(config, splits, id_epochs, id_epochs * steps, None)?;
    let wrong = error_set(&identifier, splits.train)?;
    let weights = upweight_errors(&wrong, upweight);
    let (epochs, t) = config.schedule(splits.train.len());
    let (best, best_epoch, final_main, log) = train_main_only(config, splits, epochs, t, Some(&weights))?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_main,
        log,
        committee: None,
        warmup_committee: None,
        upweighted: Some(wrong),
    })
}

/// ERM for the full schedule, then a fresh classifier retrained with
/// `single_upweight` on the samples ERM misclassified.
pub fn train_single_reweight(config: &TrainConfig, splits: Splits<'_>) -> Result<TrainOutcome> {
    check_method(config, &[Method::SingleReweight])?;
    two_stage(config, splits, config.epochs, config.single_upweight)
}

/// ERM for `jtt_epoch` epochs, then a fresh classifier retrained with
/// `jtt_upweight` on the identification model's error set.
pub fn train_jtt_like(config: &TrainConfig, splits: Splits<'_>) -> Result<TrainOutcome> {
    check_method(config, &[Method::JttLike])?;
    two_stage(config, splits, config.jtt_epoch, config.jtt_upweight)
}

/// Committee-weighted training: bootstrap subsets, committee warm-up, then
/// alternating main-classifier and committee updates on every minibatch.
pub fn train_lwbc(config: &TrainConfig, splits: Splits<'_>) -> Result<TrainOutcome> {
    check_method(config, &[Method::Lwbc, Method::LwbcNokd])?;
    check_splits(&splits)?;
    config.validate_schedule(splits.train.len())?;
    run_lwbc(config, splits, false)
}

/// `unit_weights` replaces committee weights by ones and disables the
/// committee entirely, leaving the bare main-classifier path.
fn run_lwbc(config: &TrainConfig, splits: Splits<'_>, unit_weights: bool) -> Result<TrainOutcome> {
    let train = splits.train;
    let ctx = EpochContext {
        splits,
        started: Instant::now(),
    };
    let n = train.len();
    let lr = config.lr;
    let reduction: Reduction = config.reduction();
    let lambda = match config.method {
        Method::LwbcNokd => 0.0,
        _ => config.lambda,
    };

    let subsets = bootstrap_subsets(
        n,
        config.m,
        config.subset_size,
        config.subset_with_replacement,
        &mut RngStream::new(config.seed, streams::SUBSETS),
    )?;
    let committee_rng = RngStream::new(config.seed, streams::COMMITTEE_INIT);
    let mut committee = Committee::init(train.dim(), config.hidden, train.classes(), subsets, &committee_rng)?;
    let mut main = init_main(config, train)?;
    let batch_rng = RngStream::new(config.seed, streams::BATCHES);

    let warmup = config.warmup_epochs;
    let kd_start = warmup + config.kd_delay_epochs;
    let mut log = RunLog::default();
    let mut selector = Selector::new(&config.selection_metric);
    let mut warmup_committee = None;
    let mut iterations = 0;

    let (epochs, max_iterations) = config.schedule(n);
    for epoch in 0..epochs {
        let phase = if epoch < warmup { Phase::Warmup } else { Phase::Main };
        let mut tally = WeightTally::default();
        for idx in minibatches(n, config.batch_size, &batch_rng, epoch as u64)? {
            if iterations == max_iterations {
                break;
            }
            let x = train.batch_features(&idx)?;
            let y = train.batch_labels(&idx);
            iterations += 1;
            if phase == Phase::Warmup {
                if !unit_weights {
                    committee.warmup_step(&x, &y, &idx, lr, reduction)?;
                }
                continue;
            }

            let weights = if unit_weights {
                vec![1.0; idx.len()]
            } else {
                let counts = committee.consensus_counts(&x, &y)?;
                weights_from_counts(&counts, config.m, config.alpha)?.weights
            };
            let (g, _) = main.weighted_ce_backward(&x, &y, &weights, reduction)?;
            main.adam_step(&g, lr)?;
            tally.add(train, &idx, &weights);

            if unit_weights {
                continue;
            }
            if epoch >= kd_start && lambda > 0.0 {
                let teacher = main.forward(&x)?;
                let distill = Distill {
                    teacher_logits: &teacher,
                    lambda,
                    tau: config.tau,
                };
                committee.committee_step(&x, &y, &idx, distill, lr, reduction)?;
            } else {
                committee.warmup_step(&x, &y, &idx, lr, reduction)?;
            }
        }

        let active = (!unit_weights).then_some(&committee);
        let rec = ctx.record(
            epoch,
            phase,
            iterations,
            &main,
            active,
            (phase == Phase::Main).then_some(&tally),
        )?;
        if phase == Phase::Main {
            selector.offer(epoch, &rec.val, &main);
        }
        log.records.push(rec);
        if epoch + 1 == warmup && !unit_weights {
            warmup_committee = Some(committee.clone());
        }
    }

    let (best, best_epoch) = selector.finish(&main);
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_main: main,
        log,
        committee: (!unit_weights).then_some(committee),
        warmup_committee,
        upweighted: None,
    })
}
