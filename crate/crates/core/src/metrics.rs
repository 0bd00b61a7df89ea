//! Group-robustness metrics and committee diagnostics.
//!
//! Groups are `(label, bias attribute)` cells. "Guiding" and "conflicting"
//! accuracies are computed within each class first and then averaged over
//! classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::{format_float, Dataset, Group};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub y: usize,
    pub a: usize,
    pub n: usize,
    pub correct: usize,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub overall_acc: f64,
    pub per_group_acc: Vec<GroupAccuracy>,
    /// Class-averaged accuracy on bias-guiding samples.
    pub guiding: Option<f64>,
    /// Class-averaged accuracy on bias-conflicting samples.
    pub conflicting: Option<f64>,
    /// Class-averaged mean of the per-class guiding and conflicting accuracies.
    pub unbiased: Option<f64>,
    pub worst_group: f64,
    /// Group accuracies weighted by the training-set group proportions.
    pub indistribution: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Looks a metric up by name. Unknown names yield `None`.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "overall" | "validation" | "test" | "accuracy" => Some(self.overall_acc),
            "guiding" => self.guiding,
            "conflicting" => self.conflicting,
            "unbiased" => self.unbiased,
            "worst_group" => Some(self.worst_group),
            "indistribution" => Some(self.indistribution),
            _ => None,
        }
    }

    pub const METRIC_NAMES: [&'static str; 6] =
        ["overall", "guiding", "conflicting", "unbiased", "worst_group", "indistribution"];
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Computes every group metric for `preds` on `dataset`. `train_group_counts`
/// supplies the in-distribution weights; they are renormalized over the
/// groups present in `dataset`. Empty cells are left out and noted in
/// `warnings`.
pub fn metric_suite(
    preds: &[usize],
    dataset: &Dataset,
    train_group_counts: &BTreeMap<Group, usize>,
) -> Result<MetricsReport> {
    if preds.len() != dataset.len() {
        return Err(Error::shape(
            "metric_suite",
            format!("{} predictions", preds.len()),
            format!("{} samples", dataset.len()),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "cannot evaluate an empty dataset"));
    }
    let c = dataset.classes();
    let mut cells: BTreeMap<Group, (usize, usize)> = BTreeMap::new();
    let mut conf_per_class = vec![(0usize, 0usize); c];
    let mut correct_total = 0;
    for (s, &p) in dataset.samples().iter().zip(preds) {
        let hit = usize::from(p == s.label);
        correct_total += hit;
        let cell = cells.entry((s.label, s.bias)).or_insert((0, 0));
        cell.0 += 1;
        cell.1 += hit;
        if s.conflicting() {
            conf_per_class[s.label].0 += 1;
            conf_per_class[s.label].1 += hit;
        }
    }

    let mut warnings = Vec::new();
    let per_group_acc: Vec<GroupAccuracy> = cells
        .iter()
        .map(|(&(y, a), &(n, correct))| GroupAccuracy {
            y,
            a,
            n,
            correct,
            acc: correct as f64 / n as f64,
        })
        .collect();
    for y in 0..c {
        for a in 0..c {
            if !cells.contains_key(&(y, a)) {
                warnings.push(format!("empty evaluation group (y={y}, a={a}) excluded"));
            }
        }
    }

    let mut guiding = Vec::new();
    let mut conflicting = Vec::new();
    let mut unbiased = Vec::new();
    for y in 0..c {
        let g = cells.get(&(y, y)).map(|&(n, k)| k as f64 / n as f64);
        let (n_conf, k_conf) = conf_per_class[y];
        let f = (n_conf > 0).then(|| k_conf as f64 / n_conf as f64);
        if let Some(g) = g {
            guiding.push(g);
        }
        if let Some(f) = f {
            conflicting.push(f);
        }
        match (g, f) {
            (Some(g), Some(f)) => unbiased.push((g + f) / 2.0),
            _ => warnings.push(format!("class {y} lacks guiding or conflicting samples; left out of unbiased")),
        }
    }

    let worst_group = per_group_acc.iter().map(|g| g.acc).fold(f64::INFINITY, f64::min);

    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for g in &per_group_acc {
        match train_group_counts.get(&(g.y, g.a)) {
            Some(&w) if w > 0 => {
                weight_sum += w as f64;
                weighted += w as f64 * g.acc;
            }
            _ => warnings.push(format!(
                "group (y={}, a={}) absent from training counts; zero in-distribution weight",
                g.y, g.a
            )),
        }
    }
    let indistribution = if weight_sum > 0.0 {
        weighted / weight_sum
    } else {
        return Err(Error::invalid(
            "train_group_counts",
            "no evaluated group appears in the training counts",
        ));
    };

    for w in &warnings {
        log::debug!("{w}");
    }

    Ok(MetricsReport {
        n: dataset.len(),
        overall_acc: correct_total as f64 / dataset.len() as f64,
        per_group_acc,
        guiding: mean(&guiding),
        conflicting: mean(&conflicting),
        unbiased: mean(&unbiased),
        worst_group,
        indistribution,
        warnings,
    })
}

/// Share of the weight mass on conflicting samples relative to their share
/// of the sample count.
pub fn enrichment(weights: &[f64], conflicting: &[bool]) -> Result<f64> {
    if weights.len() != conflicting.len() {
        return Err(Error::shape(
            "enrichment",
            format!("{} weights", weights.len()),
            format!("{} flags", conflicting.len()),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights", "must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    let n_conf = conflicting.iter().filter(|&&c| c).count();
    if total <= 0.0 {
        return Err(Error::invalid("weights", "total weight is zero"));
    }
    if n_conf == 0 {
        return Err(Error::invalid("conflicting", "no bias-conflicting samples"));
    }
    let conf_mass: f64 = weights.iter().zip(conflicting).filter(|(_, &c)| c).map(|(w, _)| w).sum();
    Ok((conf_mass / total) / (n_conf as f64 / weights.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBucket {
    pub k: usize,
    pub n_k: usize,
    pub n_conflicting: usize,
    /// `None` for empty buckets.
    pub ratio: Option<f64>,
}

/// Fraction of conflicting samples among those with consensus count `k`,
/// for every `k` in `0..=m`.
pub fn consensus_ratio_curve(counts: &[usize], conflicting: &[bool], m: usize) -> Result<Vec<CurveBucket>> {
    if counts.len() != conflicting.len() {
        return Err(Error::shape(
            "consensus_ratio_curve",
            format!("{} counts", counts.len()),
            format!("{} flags", conflicting.len()),
        ));
    }
    let mut buckets: Vec<CurveBucket> = (0..=m)
        .map(|k| CurveBucket {
            k,
            n_k: 0,
            n_conflicting: 0,
            ratio: None,
        })
        .collect();
    for (&k, &c) in counts.iter().zip(conflicting) {
        let b = buckets.get_mut(k).ok_or(Error::Index {
            what: "consensus buckets",
            index: k,
            len: m + 1,
        })?;
        b.n_k += 1;
        b.n_conflicting += usize::from(c);
    }
    for b in &mut buckets {
        b.ratio = (b.n_k > 0).then(|| b.n_conflicting as f64 / b.n_k as f64);
    }
    Ok(buckets)
}

/// `k,n_k,ratio` CSV; empty buckets get `NA`.
pub fn curve_to_csv(curve: &[CurveBucket]) -> String {
    let mut out = String::from("k,n_k,ratio\n");
    for b in curve {
        let ratio = b.ratio.map_or_else(|| "NA".to_string(), format_float);
        let _ = writeln!(out, "{},{},{}", b.k, b.n_k, ratio);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    /// `(i, j, count)` for every member pair `i < j`.
    pub pairs: Vec<(usize, usize, usize)>,
    pub mean: f64,
}

/// Number of samples on which each pair of members predicts differently.
/// `member_preds[l]` holds member `l`'s predictions on the same samples
/// (normally the bias-conflicting ones).
pub fn pairwise_disagreement(member_preds: &[Vec<usize>]) -> Result<Disagreement> {
    let m = member_preds.len();
    if m < 2 {
        return Err(Error::invalid("m", "pairwise disagreement needs at least two members"));
    }
    let n = member_preds[0].len();
    if member_preds.iter().any(|p| p.len() != n) {
        return Err(Error::shape("pairwise_disagreement", format!("{n} predictions"), "ragged member predictions"));
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let d = member_preds[i].iter().zip(&member_preds[j]).filter(|(a, b)| a != b).count();
            pairs.push((i, j, d));
        }
    }
    let mean = pairs.iter().map(|p| p.2 as f64).sum::<f64>() / pairs.len() as f64;
    Ok(Disagreement { pairs, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{BiasedSpec, Sample};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn dataset(rows: &[(usize, usize)], classes: usize) -> Dataset {
        let samples = rows.iter().map(|&(y, a)| Sample::new(vec![0.0], y, a)).collect();
        Dataset::from_samples(samples, classes, BiasedSpec::default()).unwrap()
    }

    fn random_fixture(seed: u64, n: usize, c: usize) -> (Dataset, Vec<usize>) {
        let mut rng = RngStream::new(seed, 0);
        let rows: Vec<(usize, usize)> = (0..n).map(|_| (rng.below(c), rng.below(c))).collect();
        let preds = (0..n).map(|_| rng.below(c)).collect();
        (dataset(&rows, c), preds)
    }

    #[test]
    fn perfect_predictions() {
        let (d, _) = random_fixture(1, 200, 3);
        let preds = d.labels();
        let r = metric_suite(&preds, &d, d.group_counts()).unwrap();
        assert_eq!(r.overall_acc, 1.0);
        assert_eq!(r.guiding, Some(1.0));
        assert_eq!(r.conflicting, Some(1.0));
        assert_eq!(r.unbiased, Some(1.0));
        assert_eq!(r.worst_group, 1.0);
        assert_eq!(r.indistribution, 1.0);
    }

    #[test]
    fn shortcut_predictor() {
        let rows = [(0, 0), (0, 0), (0, 1), (1, 1), (1, 1), (1, 0)];
        let d = dataset(&rows, 2);
        let preds: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let r = metric_suite(&preds, &d, d.group_counts()).unwrap();
        assert_eq!(r.guiding, Some(1.0));
        assert_eq!(r.conflicting, Some(0.0));
        assert_eq!(r.unbiased, Some(0.5));
        assert_eq!(r.worst_group, 0.0);
    }

    #[test]
    fn constant_predictor_worst_group() {
        let rows = [(0, 0), (0, 1), (1, 1), (1, 0)];
        let r = metric_suite(&[0; 4], &dataset(&rows, 2), &dataset(&rows, 2).group_counts().clone()).unwrap();
        assert_eq!(r.worst_group, 0.0);
    }

    #[test]
    fn matches_brute_force_tally() {
        let (d, preds) = random_fixture(2, 500, 4);
        let (train, _) = random_fixture(3, 800, 4);
        let r = metric_suite(&preds, &d, train.group_counts()).unwrap();
        let samples = d.samples();
        let acc_of = |keep: &dyn Fn(&Sample) -> bool| {
            let (mut n, mut k) = (0.0, 0.0);
            for (s, &p) in samples.iter().zip(&preds) {
                if keep(s) {
                    n += 1.0;
                    if p == s.label {
                        k += 1.0;
                    }
                }
            }
            k / n
        };
        let mut worst = f64::INFINITY;
        let mut ind = 0.0;
        let total_train: f64 = train.group_counts().values().sum::<usize>() as f64;
        for y in 0..4 {
            for a in 0..4 {
                let acc = acc_of(&|s| s.label == y && s.bias == a);
                worst = worst.min(acc);
                ind += acc * train.group_counts()[&(y, a)] as f64 / total_train;
            }
        }
        let g: Vec<f64> = (0..4).map(|y| acc_of(&|s| s.label == y && s.bias == y)).collect();
        let f: Vec<f64> = (0..4).map(|y| acc_of(&|s| s.label == y && s.bias != y)).collect();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(r.worst_group, worst));
        assert!(close(r.indistribution, ind));
        assert!(close(r.guiding.unwrap(), g.iter().sum::<f64>() / 4.0));
        assert!(close(r.conflicting.unwrap(), f.iter().sum::<f64>() / 4.0));
        let ub = (0..4).map(|y| (g[y] + f[y]) / 2.0).sum::<f64>() / 4.0;
        assert!(close(r.unbiased.unwrap(), ub));
        assert!(close(r.unbiased.unwrap(), (r.guiding.unwrap() + r.conflicting.unwrap()) / 2.0));
        assert_eq!(r.per_group_acc.len(), 16);
    }

    #[test]
    fn empty_cells_are_excluded_with_warning() {
        let rows = [(0, 0), (0, 1), (1, 1)];
        let d = dataset(&rows, 2);
        let r = metric_suite(&[0, 1, 1], &d, d.group_counts()).unwrap();
        assert_eq!(r.per_group_acc.len(), 3);
        assert!(r.warnings.iter().any(|w| w.contains("(y=1, a=0)")));
        assert_eq!(r.worst_group, 0.0);
        assert_eq!(r.guiding, Some(1.0));
        assert_eq!(r.conflicting, Some(0.0));
        assert_eq!(r.unbiased, Some(0.5));
    }

    #[test]
    fn enrichment_closed_forms() {
        let mut flags = vec![false; 100];
        flags[..10].iter_mut().for_each(|f| *f = true);
        assert_eq!(enrichment(&[1.0; 100], &flags).unwrap(), 1.0);
        let w: Vec<f64> = flags.iter().map(|&c| if c { 50.0 } else { 1.0 }).collect();
        let want = (500.0 / 590.0) / 0.1;
        assert!((enrichment(&w, &flags).unwrap() - want).abs() < 1e-12);
        assert!((want - 8.4746).abs() < 1e-4);
        let only_conf: Vec<f64> = flags.iter().map(|&c| if c { 2.0 } else { 0.0 }).collect();
        assert!((enrichment(&only_conf, &flags).unwrap() - 10.0).abs() < 1e-12);
        assert!(enrichment(&[0.0; 100], &flags).is_err());
        assert!(enrichment(&[1.0; 100], &[false; 100]).is_err());
    }

    #[test]
    fn curve_edge_cases() {
        let curve = consensus_ratio_curve(&[0, 0, 2], &[true; 3], 3).unwrap();
        assert_eq!(curve[0].ratio, Some(1.0));
        assert_eq!(curve[1].ratio, None);
        assert_eq!(curve[2].ratio, Some(1.0));
        let none = consensus_ratio_curve(&[0, 1, 1], &[false; 3], 2).unwrap();
        assert!(none.iter().filter_map(|b| b.ratio).all(|r| r == 0.0));
        assert!(consensus_ratio_curve(&[4], &[true], 3).is_err());
        let csv = curve_to_csv(&curve);
        assert!(csv.starts_with("k,n_k,ratio\n0,2,1.0000000000000000e0\n1,0,NA\n"));
    }

    #[test]
    fn curve_matches_brute_force() {
        let mut rng = RngStream::new(4, 0);
        let m = 7;
        let counts: Vec<usize> = (0..300).map(|_| rng.below(m + 1)).collect();
        let flags: Vec<bool> = (0..300).map(|_| rng.below(3) == 0).collect();
        let curve = consensus_ratio_curve(&counts, &flags, m).unwrap();
        for k in 0..=m {
            let members: Vec<usize> = (0..300).filter(|&i| counts[i] == k).collect();
            let conf = members.iter().filter(|&&i| flags[i]).count();
            assert_eq!(curve[k].n_k, members.len());
            if !members.is_empty() {
                assert_eq!(curve[k].ratio, Some(conf as f64 / members.len() as f64));
            }
        }
    }

    #[test]
    fn disagreement_cases() {
        let same = vec![vec![0, 1, 2]; 3];
        let d = pairwise_disagreement(&same).unwrap();
        assert_eq!(d.pairs.len(), 3);
        assert!(d.pairs.iter().all(|p| p.2 == 0));
        let opposite = vec![vec![0; 5], vec![1; 5]];
        assert_eq!(pairwise_disagreement(&opposite).unwrap().pairs, vec![(0, 1, 5)]);
        assert!(pairwise_disagreement(&[vec![0]]).is_err());
    }

    #[test]
    fn disagreement_matches_double_loop() {
        let mut rng = RngStream::new(5, 0);
        let preds: Vec<Vec<usize>> = (0..5).map(|_| (0..40).map(|_| rng.below(3)).collect()).collect();
        let d = pairwise_disagreement(&preds).unwrap();
        let mut total = 0;
        for &(i, j, c) in &d.pairs {
            let mut brute = 0;
            for s in 0..40 {
                if preds[i][s] != preds[j][s] {
                    brute += 1;
                }
            }
            assert_eq!(c, brute);
            total += brute;
        }
        assert!((d.mean - total as f64 / 10.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn worst_le_indistribution_le_best(seed in 0u64..1000) {
            let (d, preds) = random_fixture(seed, 120, 3);
            let (train, _) = random_fixture(seed + 1, 300, 3);
            let r = metric_suite(&preds, &d, train.group_counts()).unwrap();
            let best = r.per_group_acc.iter().map(|g| g.acc).fold(0.0, f64::max);
            prop_assert!(r.worst_group <= r.indistribution + 1e-12);
            prop_assert!(r.indistribution <= best + 1e-12);
            for v in [r.overall_acc, r.worst_group, r.indistribution] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn enrichment_scale_invariant(seed in 0u64..1000, c in 0.001f64..1000.0) {
            let mut rng = RngStream::new(seed, 3);
            let w: Vec<f64> = (0..50).map(|_| rng.uniform_range(0.1, 5.0)).collect();
            let mut flags: Vec<bool> = (0..50).map(|_| rng.below(4) == 0).collect();
            flags[0] = true;
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let a = enrichment(&w, &flags).unwrap();
            let b = enrichment(&scaled, &flags).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        }

        #[test]
        fn curve_buckets_sum_to_n(seed in 0u64..1000, m in 1usize..20) {
            let mut rng = RngStream::new(seed, 4);
            let counts: Vec<usize> = (0..100).map(|_| rng.below(m + 1)).collect();
            let flags: Vec<bool> = (0..100).map(|_| rng.below(2) == 0).collect();
            let curve = consensus_ratio_curve(&counts, &flags, m).unwrap();
            prop_assert_eq!(curve.iter().map(|b| b.n_k).sum::<usize>(), 100);
        }
    }
}
