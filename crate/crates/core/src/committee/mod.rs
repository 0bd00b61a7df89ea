//! The bootstrapped committee of biased auxiliary classifiers.
//!
//! Member `l` trains with cross-entropy on the part of each minibatch that
//! falls inside its bootstrap subset `S_l`, and (after warm-up) with a
//! distillation term toward the main classifier on the rest of the batch.
//! Members never read each other, so the update order is irrelevant.

use crate::classifier::{ClassifierState, Gradients, Reduction};
use crate::datagen::BootstrapSubset;
use crate::error::{Error, Result};
use crate::metrics::{pairwise_disagreement, Disagreement};
use crate::numerics::{Matrix, RngStream, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Committee<T> {
    members: Vec<ClassifierState<T>>,
    subsets: Vec<BootstrapSubset>,
}

/// Consensus counts and the sample weights derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBatch<T> {
    pub counts: Vec<usize>,
    pub weights: Vec<T>,
}

/// `w = 1 / (k/m + α)` for every consensus count `k`.
pub fn weights_from_counts<T: Scalar>(counts: &[usize], m: usize, alpha: T) -> Result<WeightBatch<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("{alpha} must be positive")));
    }
    if m == 0 {
        return Err(Error::invalid("m", "committee size must be at least 1"));
    }
    let m_t = T::lit(m as f64);
    let weights = counts
        .iter()
        .map(|&k| {
            if k > m {
                return Err(Error::Index {
                    what: "consensus count",
                    index: k,
                    len: m + 1,
                });
            }
            Ok(T::one() / (T::lit(k as f64) / m_t + alpha))
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(WeightBatch {
        counts: counts.to_vec(),
        weights,
    })
}

/// Distillation settings for one committee update.
#[derive(Clone, Copy, Debug)]
pub struct Distill<'a, T> {
    pub teacher_logits: &'a Matrix<T>,
    pub lambda: T,
    pub tau: T,
}

impl<T: Scalar> Committee<T> {
    pub fn new(members: Vec<ClassifierState<T>>, subsets: Vec<BootstrapSubset>) -> Result<Self> {
        if members.is_empty() || members.len() != subsets.len() {
            return Err(Error::invalid(
                "committee",
                format!("{} members for {} subsets", members.len(), subsets.len()),
            ));
        }
        let n = subsets[0].universe();
        if subsets.iter().any(|s| s.universe() != n) {
            return Err(Error::invalid("committee", "subsets index different training sets"));
        }
        Ok(Self { members, subsets })
    }

    /// Initializes one member per subset, member `l` from `rng.derive(l)`.
    pub fn init(
        d_in: usize,
        d_hidden: usize,
        classes: usize,
        subsets: Vec<BootstrapSubset>,
        rng: &RngStream,
    ) -> Result<Self> {
        let members = (0..subsets.len())
            .map(|l| ClassifierState::init(d_in, d_hidden, classes, &mut rng.derive(l as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, subsets)
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[ClassifierState<T>] {
        &self.members
    }

    pub fn subsets(&self) -> &[BootstrapSubset] {
        &self.subsets
    }

    fn check_batch(&self, x: &Matrix<T>, labels: &[usize], idx: &[usize]) -> Result<()> {
        if labels.len() != x.rows() || idx.len() != x.rows() {
            return Err(Error::shape(
                "committee batch",
                format!("{} rows", x.rows()),
                format!("{} labels, {} indices", labels.len(), idx.len()),
            ));
        }
        let n = self.subsets[0].universe();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Index {
                what: "training set",
                index: bad,
                len: n,
            });
        }
        Ok(())
    }

    /// Committee-only cross-entropy step over `B ∩ S_l` for every member.
    /// Returns each member's loss, `None` where the intersection was empty
    /// and the member was left untouched.
    pub fn warmup_step(
        &mut self,
        x: &Matrix<T>,
        labels: &[usize],
        idx: &[usize],
        lr: T,
        reduction: Reduction,
    ) -> Result<Vec<Option<T>>> {
        self.check_batch(x, labels, idx)?;
        self.members
            .iter_mut()
            .zip(&self.subsets)
            .map(|(member, subset)| member_step(member, subset, x, labels, idx, None, lr, reduction))
            .collect()
    }

    /// Combined step: per member, one Adam update on
    /// `(1-λ)·∇CE(B ∩ S_l) + λ·∇KD(B \ S_l)`. With `λ = 0` this is exactly
    /// [`warmup_step`](Self::warmup_step).
    pub fn committee_step(
        &mut self,
        x: &Matrix<T>,
        labels: &[usize],
        idx: &[usize],
        distill: Distill<'_, T>,
        lr: T,
        reduction: Reduction,
    ) -> Result<Vec<Option<T>>> {
        if !(distill.lambda >= T::zero() && distill.lambda <= T::one()) {
            return Err(Error::invalid("lambda", format!("{} must lie in [0, 1]", distill.lambda)));
        }
        if !(distill.tau > T::zero()) {
            return Err(Error::invalid("tau", format!("{} must be positive", distill.tau)));
        }
        self.check_batch(x, labels, idx)?;
        if distill.teacher_logits.rows() != x.rows() {
            return Err(Error::shape(
                "committee_step",
                format!("{} batch rows", x.rows()),
                format!("teacher {}", distill.teacher_logits.shape_str()),
            ));
        }
        let kd = (distill.lambda > T::zero()).then_some(distill);
        self.members
            .iter_mut()
            .zip(&self.subsets)
            .map(|(member, subset)| member_step(member, subset, x, labels, idx, kd, lr, reduction))
            .collect()
    }

    /// Number of members predicting each row's label.
    pub fn consensus_counts(&self, x: &Matrix<T>, labels: &[usize]) -> Result<Vec<usize>> {
        if labels.len() != x.rows() {
            return Err(Error::shape(
                "consensus_counts",
                format!("{} rows", x.rows()),
                format!("{} labels", labels.len()),
            ));
        }
        let mut counts = vec![0; x.rows()];
        for member in &self.members {
            for (c, (p, y)) in counts.iter_mut().zip(member.predict(x)?.iter().zip(labels)) {
                *c += usize::from(p == y);
            }
        }
        Ok(counts)
    }

    /// Predictions of every member, member-major.
    pub fn member_predictions(&self, x: &Matrix<T>) -> Result<Vec<Vec<usize>>> {
        self.members.iter().map(|m| m.predict(x)).collect()
    }

    /// Pairwise prediction disagreement on the rows of `x` (typically the
    /// bias-conflicting samples).
    pub fn pairwise_disagreement(&self, x: &Matrix<T>) -> Result<Disagreement> {
        pairwise_disagreement(&self.member_predictions(x)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn member_step<T: Scalar>(
    member: &mut ClassifierState<T>,
    subset: &BootstrapSubset,
    x: &Matrix<T>,
    labels: &[usize],
    idx: &[usize],
    kd: Option<Distill<'_, T>>,
    lr: T,
    reduction: Reduction,
) -> Result<Option<T>> {
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..idx.len()).partition(|&r| subset.contains(idx[r]));
    let ce_weight = kd.map_or(T::one(), |d| T::one() - d.lambda);
    let ce_active = !inside.is_empty() && ce_weight > T::zero();
    let kd_active = kd.is_some() && !outside.is_empty();
    if !ce_active && !kd_active {
        return Ok(None);
    }

    let mut total = Gradients::zeros_like(member);
    let mut loss = T::zero();
    if ce_active {
        let xs = x.select_rows(&inside)?;
        let ys: Vec<usize> = inside.iter().map(|&r| labels[r]).collect();
        let (g, l) = member.weighted_ce_backward(&xs, &ys, &vec![T::one(); ys.len()], reduction)?;
        match kd {
            // λ = 0 or warm-up: use the CE gradient unscaled.
            None => total = g,
            Some(_) => total.add_scaled(&g, ce_weight)?,
        }
        loss = loss + ce_weight * l;
    }
    if let (true, Some(d)) = (kd_active, kd) {
        let xs = x.select_rows(&outside)?;
        let teacher = d.teacher_logits.select_rows(&outside)?;
        let (g, l) = member.kd_backward(&xs, &teacher, d.tau, reduction)?;
        total.add_scaled(&g, d.lambda)?;
        loss = loss + d.lambda * l;
    }
    member.adam_step(&total, lr)?;
    Ok(Some(loss))
}
