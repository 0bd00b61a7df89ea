//! Seeded finite-difference battery over the three training losses.

use serde::Serialize;

use crate::classifier::{ClassifierState, Reduction};
use crate::error::Result;
use crate::numerics::{finite_diff_check, Matrix, RngStream};

pub const TOLERANCE: f64 = 1e-5;
pub const STEP: f64 = 3e-5;
pub const DEFAULT_CONFIGS: usize = 100;
pub const DEFAULT_SEED: u64 = 0x6772_6164;

/// Pre-activations closer than this to the ReLU kink are redrawn so that no
/// probe crosses it.
const KINK_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    WeightedCrossEntropy,
    Distillation { tau_milli: u32 },
}

impl Loss {
    pub const ALL: [Loss; 4] = [
        Loss::CrossEntropy,
        Loss::WeightedCrossEntropy,
        Loss::Distillation { tau_milli: 1000 },
        Loss::Distillation { tau_milli: 2500 },
    ];

    pub fn tau(self) -> Option<f64> {
        match self {
            Loss::Distillation { tau_milli } => Some(f64::from(tau_milli) / 1000.0),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Loss::CrossEntropy => "ce".into(),
            Loss::WeightedCrossEntropy => "weighted_ce".into(),
            Loss::Distillation { .. } => format!("kd_tau_{}", self.tau().unwrap_or_default()),
        }
    }
}

/// Deliberate gradient corruption, for checking that the battery fails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    KdSignFlip,
}

/// One random problem: a classifier, a batch, labels, weights and teacher
/// logits.
#[derive(Clone, Debug)]
pub struct Problem {
    pub index: usize,
    pub state: ClassifierState<f64>,
    pub x: Matrix<f64>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub teacher: Matrix<f64>,
}

impl Problem {
    pub fn describe(&self) -> String {
        format!(
            "config {} (d_in={}, hidden={}, classes={}, batch={})",
            self.index,
            self.state.d_in(),
            self.state.d_hidden(),
            self.state.classes(),
            self.x.rows()
        )
    }

    fn clear_of_kinks(&self) -> Result<bool> {
        let mut pre = self.x.matmul(&self.state.w1)?;
        pre.add_row_vector(&self.state.b1)?;
        Ok(pre.data().iter().all(|v| v.abs() > KINK_MARGIN))
    }

    /// Loss and flattened analytic gradient at `params`.
    pub fn objective(&self, loss: Loss, fault: Fault, params: &[f64]) -> (f64, Vec<f64>) {
        let mut s = self.state.clone();
        if s.set_params_flat(params).is_err() {
            return (f64::NAN, Vec::new());
        }
        let result = match loss {
            Loss::CrossEntropy => {
                s.weighted_ce_backward(&self.x, &self.labels, &vec![1.0; self.labels.len()], Reduction::Mean)
            }
            Loss::WeightedCrossEntropy => s.weighted_ce_backward(&self.x, &self.labels, &self.weights, Reduction::Mean),
            Loss::Distillation { .. } => s.kd_backward(&self.x, &self.teacher, loss.tau().unwrap_or(1.0), Reduction::Mean),
        };
        match result {
            Ok((g, l)) => {
                let mut flat = g.flatten();
                if fault == Fault::KdSignFlip && loss.tau().is_some() {
                    flat.iter_mut().for_each(|v| *v = -*v);
                }
                (l, flat)
            }
            Err(_) => (f64::NAN, Vec::new()),
        }
    }

    pub fn check(&self, loss: Loss, fault: Fault) -> Result<f64> {
        finite_diff_check(|p| self.objective(loss, fault, p), &self.state.params_flat(), STEP)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Result<Matrix<f64>> {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| scale * rng.gaussian()).collect())
}

/// Draws problem `index` of the battery seeded by `seed`. Sizes are at most
/// 8 for every dimension and 6 for the batch.
pub fn problem(seed: u64, index: usize) -> Result<Problem> {
    let mut rng = RngStream::new(seed, index as u64);
    loop {
        let d_in = 1 + rng.below(8);
        let hidden = 1 + rng.below(8);
        let classes = 2 + rng.below(7);
        let batch = 1 + rng.below(6);
        let mut state = ClassifierState::init(d_in, hidden, classes, &mut rng)?;
        for b in state.b1.iter_mut().chain(state.b2.iter_mut()) {
            *b = 0.5 * rng.gaussian();
        }
        let x = Matrix::new(
            batch,
            d_in,
            (0..batch * d_in)
                .map(|_| {
                    let v = rng.uniform_range(0.5, 1.5);
                    if rng.below(2) == 0 { v } else { -v }
                })
                .collect(),
        )?;
        let labels = (0..batch).map(|_| rng.below(classes)).collect();
        let weights = (0..batch).map(|_| rng.uniform_range(0.1, 50.0)).collect();
        let teacher = gaussian_matrix(batch, classes, 2.0, &mut rng)?;
        let p = Problem {
            index,
            state,
            x,
            labels,
            weights,
            teacher,
        };
        if p.clear_of_kinks()? {
            return Ok(p);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LossResult {
    pub loss: String,
    pub max_rel_error: f64,
    /// Problem with the largest error.
    pub worst_config: usize,
    pub worst_description: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub configs: usize,
    pub tolerance: f64,
    pub step: f64,
    pub results: Vec<LossResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Runs every loss over `configs` random problems.
pub fn run_battery(seed: u64, configs: usize, fault: Fault) -> Result<Report> {
    let problems = (0..configs).map(|i| problem(seed, i)).collect::<Result<Vec<_>>>()?;
    let mut results = Vec::new();
    for loss in Loss::ALL {
        let mut worst = (0.0f64, 0usize);
        for p in &problems {
            let err = p.check(loss, fault)?;
            if err > worst.0 || err.is_nan() {
                worst = (err, p.index);
            }
        }
        results.push(LossResult {
            loss: loss.label(),
            max_rel_error: worst.0,
            worst_config: worst.1,
            worst_description: problems.get(worst.1).map_or_else(String::new, Problem::describe),
            passed: worst.0 < TOLERANCE,
        });
    }
    Ok(Report {
        configs,
        tolerance: TOLERANCE,
        step: STEP,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        let report = run_battery(DEFAULT_SEED, DEFAULT_CONFIGS, Fault::None).unwrap();
        for r in &report.results {
            assert!(r.passed, "{} {} on {}", r.loss, r.max_rel_error, r.worst_description);
        }
        assert_eq!(report.results.len(), 4);
    }

    #[test]
    fn sign_flip_fails_only_distillation() {
        let report = run_battery(DEFAULT_SEED, 10, Fault::KdSignFlip).unwrap();
        assert!(!report.passed());
        for r in &report.results {
            assert_eq!(r.passed, !r.loss.starts_with("kd"), "{}", r.loss);
        }
    }

    #[test]
    fn reported_errors_match_direct_checks() {
        let report = run_battery(7, 5, Fault::None).unwrap();
        for (loss, r) in Loss::ALL.into_iter().zip(&report.results) {
            let direct = (0..5)
                .map(|i| {
                    let p = problem(7, i).unwrap();
                    finite_diff_check(|t| p.objective(loss, Fault::None, t), &p.state.params_flat(), STEP).unwrap()
                })
                .fold(0.0, f64::max);
            assert_eq!(r.max_rel_error, direct);
        }
    }

    #[test]
    fn problems_respect_size_limits() {
        for i in 0..50 {
            let p = problem(1, i).unwrap();
            assert!(p.state.d_in() <= 8 && p.state.d_hidden() <= 8 && p.state.classes() <= 8);
            assert!((1..=6).contains(&p.x.rows()));
            assert!(p.clear_of_kinks().unwrap());
        }
    }
}
