//! Seeded synthetic biased datasets, bootstrap subsets, stratified splits
//! and minibatch streams.
//!
//! Each sample carries a "core" feature block that determines its class and
//! a "bias" block that determines its latent attribute. Class means and
//! attribute means are one-hot directions scaled by `delta_*`; the bias block
//! has a much larger margin-to-noise ratio, so a classifier picks it up first.
//! A fixed quota of samples per class gets an attribute different from its
//! label; those are the bias-conflicting samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasedSpec {
    pub n: usize,
    pub classes: usize,
    /// Fraction of each class whose attribute differs from the label.
    pub rho: f64,
    pub d_core: usize,
    pub d_bias: usize,
    pub delta_core: f64,
    pub delta_bias: f64,
    pub sigma_core: f64,
    pub sigma_bias: f64,
}

impl Default for BiasedSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            classes: 4,
            rho: 0.05,
            d_core: 16,
            d_bias: 4,
            delta_core: 1.0,
            delta_bias: 2.0,
            sigma_core: 1.0,
            sigma_bias: 0.25,
        }
    }
}

impl BiasedSpec {
    pub fn dim(&self) -> usize {
        self.d_core + self.d_bias
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        if self.n == 0 || !self.n.is_multiple_of(self.classes) {
            return Err(Error::invalid(
                "n",
                format!("{} must be positive and divisible by classes={}", self.n, self.classes),
            ));
        }
        let max_rho = 1.0 - 1.0 / self.classes as f64;
        if !(0.0..=max_rho + 1e-12).contains(&self.rho) {
            return Err(Error::invalid("rho", format!("{} must lie in [0, 1 - 1/C] = [0, {max_rho}]", self.rho)));
        }
        if self.d_core < self.classes {
            return Err(Error::invalid("d_core", "must be at least the class count"));
        }
        if self.d_bias < self.classes {
            return Err(Error::invalid("d_bias", "must be at least the class count"));
        }
        for (name, v) in [
            ("delta_core", self.delta_core),
            ("delta_bias", self.delta_bias),
            ("sigma_core", self.sigma_core),
            ("sigma_bias", self.sigma_bias),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive and finite")));
            }
        }
        if self.delta_bias / self.sigma_bias <= self.delta_core / self.sigma_core {
            return Err(Error::invalid(
                "delta_bias/sigma_bias",
                "bias block must be strictly easier than the core block (delta_bias/sigma_bias > delta_core/sigma_core)",
            ));
        }
        Ok(())
    }

    /// Conflicting samples per class: `round(rho · n / C)`.
    pub fn conflicting_per_class(&self) -> usize {
        (self.rho * (self.n / self.classes) as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub bias: usize,
    conflicting: bool,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize, bias: usize) -> Self {
        Self {
            features,
            label,
            bias,
            conflicting: label != bias,
        }
    }

    #[inline]
    pub fn conflicting(&self) -> bool {
        self.conflicting
    }
}

/// Cell key `(label, bias attribute)`.
pub type Group = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    group_counts: BTreeMap<Group, usize>,
    spec: BiasedSpec,
    features: Matrix<f64>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>, classes: usize, spec: BiasedSpec) -> Result<Self> {
        let dim = samples.first().map_or(spec.dim(), |s| s.features.len());
        let mut data = Vec::with_capacity(samples.len() * dim);
        let mut group_counts = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::shape(
                    "Dataset::from_samples",
                    format!("feature length {dim}"),
                    format!("sample {i} with {}", s.features.len()),
                ));
            }
            if s.label >= classes || s.bias >= classes {
                return Err(Error::Index {
                    what: "classes",
                    index: s.label.max(s.bias),
                    len: classes,
                });
            }
            data.extend_from_slice(&s.features);
            *group_counts.entry((s.label, s.bias)).or_insert(0) += 1;
        }
        let features = Matrix::new(samples.len(), dim, data)?;
        Ok(Self {
            samples,
            classes,
            group_counts,
            spec,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn spec(&self) -> &BiasedSpec {
        &self.spec
    }

    pub fn group_counts(&self) -> &BTreeMap<Group, usize> {
        &self.group_counts
    }

    /// All features as an `n × dim` matrix.
    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn conflicting_flags(&self) -> Vec<bool> {
        self.samples.iter().map(Sample::conflicting).collect()
    }

    pub fn num_conflicting(&self) -> usize {
        self.samples.iter().filter(|s| s.conflicting()).count()
    }

    /// Features of the given rows.
    pub fn batch_features(&self, idx: &[usize]) -> Result<Matrix<f64>> {
        self.features.select_rows(idx)
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    /// A new dataset holding the given rows in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = self.samples.get(i).ok_or(Error::Index {
                what: "dataset",
                index: i,
                len: self.len(),
            })?;
            out.push(s.clone());
        }
        Dataset::from_samples(out, self.classes, self.spec.clone())
    }

    /// Writes `idx,y,a,conflicting,f0..f{d-1}` rows plus a JSON sidecar with
    /// the generating spec (see [`sidecar_path`]). Floats use 17 significant
    /// digits so the file is byte-stable.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("idx,y,a,conflicting");
        for j in 0..self.dim() {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let _ = write!(out, "{i},{},{},{}", s.label, s.bias, s.conflicting());
            for v in &s.features {
                let _ = write!(out, ",{}", format_float(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn import_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let spec: BiasedSpec = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        spec.validate()?;
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let dim = spec.dim();
        let mut expected = vec!["idx".to_string(), "y".into(), "a".into(), "conflicting".into()];
        expected.extend((0..dim).map(|j| format!("f{j}")));
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Format(format!("unexpected CSV header in {}", path.display())));
        }
        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |k: usize| record.get(k).unwrap_or_default();
            let parse_usize = |k: usize| {
                field(k)
                    .parse::<usize>()
                    .map_err(|e| Error::Format(format!("row {row}, column {k}: {e}")))
            };
            if parse_usize(0)? != row {
                return Err(Error::Format(format!("row {row}: idx out of sequence")));
            }
            let (y, a) = (parse_usize(1)?, parse_usize(2)?);
            let conflicting: bool = field(3)
                .parse()
                .map_err(|e| Error::Format(format!("row {row}: conflicting: {e}")))?;
            if conflicting != (y != a) {
                return Err(Error::Format(format!("row {row}: conflicting flag disagrees with y/a")));
            }
            let features = (4..4 + dim)
                .map(|k| {
                    field(k)
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {row}, column {k}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample::new(features, y, a));
        }
        if samples.len() != spec.n {
            return Err(Error::Format(format!(
                "{} rows but sidecar declares n={}",
                samples.len(),
                spec.n
            )));
        }
        let classes = spec.classes;
        Dataset::from_samples(samples, classes, spec)
    }
}

/// `data.csv` → `data.spec.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("spec.json")
}

/// Fixed 17-significant-digit float formatting.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draws a dataset from `spec`. Samples are produced class by class, the
/// first `conflicting_per_class` of each class receiving a uniformly random
/// attribute different from the label, and the result is shuffled.
pub fn generate(spec: &BiasedSpec, rng: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.classes;
    let per_class = spec.n / c;
    let quota = spec.conflicting_per_class();
    let mut samples = Vec::with_capacity(spec.n);
    for y in 0..c {
        for j in 0..per_class {
            let a = if j < quota { (y + 1 + rng.below(c - 1)) % c } else { y };
            let mut features = Vec::with_capacity(spec.dim());
            for k in 0..spec.d_core {
                let mean = if k == y { spec.delta_core } else { 0.0 };
                features.push(mean + spec.sigma_core * rng.gaussian());
            }
            for k in 0..spec.d_bias {
                let mean = if k == a { spec.delta_bias } else { 0.0 };
                features.push(mean + spec.sigma_bias * rng.gaussian());
            }
            samples.push(Sample::new(features, y, a));
        }
    }
    rng.shuffle(&mut samples);
    Dataset::from_samples(samples, c, spec.clone())
}

/// One bootstrapped training subset `S_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSubset {
    /// The drawn indices, duplicates included.
    pub indices: Vec<usize>,
    member: Vec<bool>,
}

impl BootstrapSubset {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut member = vec![false; n];
        for &i in &indices {
            *member.get_mut(i).ok_or(Error::Index {
                what: "training set",
                index: i,
                len: n,
            })? = true;
        }
        Ok(Self { indices, member })
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.member.get(i).copied().unwrap_or(false)
    }

    pub fn unique_len(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    /// Size of the training set the indices refer to.
    pub fn universe(&self) -> usize {
        self.member.len()
    }
}

/// Draws `m` subsets of `subset_size` indices from `0..n`. With
/// `with_replacement` every index is drawn i.i.d. uniformly (duplicates
/// allowed); otherwise each subset is a uniform sample without replacement.
pub fn bootstrap_subsets(
    n: usize,
    m: usize,
    subset_size: usize,
    with_replacement: bool,
    rng: &mut RngStream,
) -> Result<Vec<BootstrapSubset>> {
    if n == 0 {
        return Err(Error::invalid("train", "empty training set"));
    }
    if m == 0 || subset_size == 0 {
        return Err(Error::invalid("m/subset_size", "must both be at least 1"));
    }
    if !with_replacement && subset_size > n {
        return Err(Error::invalid(
            "subset_size",
            format!("{subset_size} exceeds training set size {n} without replacement"),
        ));
    }
    (0..m)
        .map(|_| {
            let indices = if with_replacement {
                (0..subset_size).map(|_| rng.below(n)).collect()
            } else {
                let mut pool: Vec<usize> = (0..n).collect();
                for i in 0..subset_size {
                    let j = i + rng.below(n - i);
                    pool.swap(i, j);
                }
                pool.truncate(subset_size);
                pool
            };
            BootstrapSubset::new(indices, n)
        })
        .collect()
}

/// Group-stratified split into train/val/test. Within each `(y, a)` cell the
/// indices are shuffled and apportioned by largest remainder, so each split
/// holds every cell within one sample of its exact share. Rows keep their
/// original order inside each split.
pub fn split(dataset: &Dataset, fractions: [f64; 3], rng: &mut RngStream) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fractions", format!("{fractions:?} must be non-negative and sum to 1")));
    }
    let active = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut by_group: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        by_group.entry((s.label, s.bias)).or_default().push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (group, mut idx) in by_group {
        if idx.len() < active {
            return Err(Error::invalid(
                format!("group (y={}, a={})", group.0, group.1),
                format!("{} samples cannot cover {active} splits", idx.len()),
            ));
        }
        rng.shuffle(&mut idx);
        let counts = apportion(idx.len(), &fractions);
        let mut start = 0;
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&idx[start..start + count]);
            start += count;
        }
    }
    let [a, b, c] = parts.map(|mut p| {
        p.sort_unstable();
        p
    });
    Ok((dataset.subset(&a)?, dataset.subset(&b)?, dataset.subset(&c)?))
}

/// Largest-remainder apportionment of `total` items; ties go to the earlier
/// split. Zero fractions always get zero.
fn apportion(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * total as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|&k| fractions[k] > 0.0).collect();
    order.sort_by(|&x, &y| {
        let rx = exact[x] - counts[x] as f64;
        let ry = exact[y] - counts[y] as f64;
        ry.partial_cmp(&rx).unwrap().then(x.cmp(&y))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Index batches for one epoch: a fresh permutation drawn from
/// `rng.derive(epoch)`, chunked into batches of `b` with the short tail kept.
pub fn minibatches(n: usize, b: usize, rng: &RngStream, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    let perm = rng.derive(epoch).permutation(n);
    Ok(perm.chunks(b).map(<[usize]>::to_vec).collect())
}
