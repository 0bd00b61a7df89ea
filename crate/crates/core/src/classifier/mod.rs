//! Two-layer ReLU classifier with analytic gradients and Adam.
//!
//! The same architecture serves as the main classifier and as every
//! committee member: `logits = relu(X·W1 + b1)·W2 + b2`.

mod adam;
mod checkpoint;
mod grads;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, stable_softmax, Matrix, RngStream, Scalar};

pub use adam::AdamState;
pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use grads::Gradients;

/// How per-sample losses are reduced over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Divide the summed loss by the number of samples.
    #[default]
    Mean,
    /// Plain sum over samples.
    Sum,
}

impl Reduction {
    fn scale<T: Scalar>(self, n: usize) -> T {
        match self {
            Reduction::Mean => T::one() / T::lit(n as f64),
            Reduction::Sum => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ClassifierState<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub adam: AdamState<T>,
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache<T> {
    pre: Matrix<T>,
    hidden: Matrix<T>,
    logits: Matrix<T>,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Scale of the initial weight range relative to `1/√fan_in`.
pub const INIT_SCALE: f64 = 0.6;

impl<T: Scalar> ClassifierState<T> {
    /// Weights uniform in `±INIT_SCALE/√fan_in`, zero biases, zero Adam
    /// moments.
    pub fn init(d_in: usize, d_hidden: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        for (name, v) in [("d_in", d_in), ("d_hidden", d_hidden), ("classes", classes)] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        let mut uniform = |rows: usize, cols: usize| {
            let bound = INIT_SCALE / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| T::lit(rng.uniform_range(-bound, bound)))
                .collect();
            Matrix::new(rows, cols, data)
        };
        let w1 = uniform(d_in, d_hidden)?;
        let w2 = uniform(d_hidden, classes)?;
        Ok(Self::from_parts(w1, vec![T::zero(); d_hidden], w2, vec![T::zero(); classes]))
    }

    /// Wraps explicit parameters with a fresh optimizer state.
    pub fn from_parts(w1: Matrix<T>, b1: Vec<T>, w2: Matrix<T>, b2: Vec<T>) -> Self {
        let adam = AdamState::new(w1.shape(), w2.shape());
        Self { w1, b1, w2, b2, adam }
    }

    pub fn zeroed(d_in: usize, d_hidden: usize, classes: usize) -> Self {
        Self::from_parts(
            Matrix::zeros(d_in, d_hidden),
            vec![T::zero(); d_hidden],
            Matrix::zeros(d_hidden, classes),
            vec![T::zero(); classes],
        )
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn num_params(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }

    fn validate(&self) -> Result<()> {
        let (d_in, h) = self.w1.shape();
        let (h2, c) = self.w2.shape();
        if d_in == 0 || h == 0 || c == 0 || h2 != h || self.b1.len() != h || self.b2.len() != c {
            return Err(Error::shape(
                "classifier",
                format!("W1 {d_in}x{h}, b1 {}", self.b1.len()),
                format!("W2 {h2}x{c}, b2 {}", self.b2.len()),
            ));
        }
        self.adam.check_shapes(self.w1.shape(), self.w2.shape())
    }

    fn forward_cached(&self, x: &Matrix<T>) -> Result<ForwardCache<T>> {
        if x.cols() != self.d_in() {
            return Err(Error::shape("forward", x.shape_str(), self.w1.shape_str()));
        }
        let mut pre = x.matmul(&self.w1)?;
        pre.add_row_vector(&self.b1)?;
        let hidden = pre.map(|v| v.max(T::zero()));
        let mut logits = hidden.matmul(&self.w2)?;
        logits.add_row_vector(&self.b2)?;
        Ok(ForwardCache { pre, hidden, logits })
    }

    /// Logits for a `batch × d_in` input.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Argmax label per row.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    fn backward(&self, x: &Matrix<T>, cache: &ForwardCache<T>, dlogits: &Matrix<T>) -> Result<Gradients<T>> {
        let w2 = cache.hidden.t_matmul(dlogits)?;
        let b2 = dlogits.col_sums();
        let mut dpre = dlogits.matmul_t(&self.w2)?;
        for (d, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            if p <= T::zero() {
                *d = T::zero();
            }
        }
        let w1 = x.t_matmul(&dpre)?;
        let b1 = dpre.col_sums();
        Ok(Gradients { w1, b1, w2, b2 })
    }

    /// Gradient of `scale · Σᵢ wᵢ·CE(f(xᵢ), yᵢ)` where `scale` is `1/|B|`
    /// under [`Reduction::Mean`]. Returns the gradients and the reduced loss.
    pub fn weighted_ce_backward(
        &self,
        x: &Matrix<T>,
        labels: &[usize],
        weights: &[T],
        reduction: Reduction,
    ) -> Result<(Gradients<T>, T)> {
        let n = x.rows();
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape(
                "weighted_ce_backward",
                format!("batch of {n}"),
                format!("{} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        if let Some(i) = weights.iter().position(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("weight {} at position {i} must be finite and non-negative", weights[i]),
            ));
        }
        if n == 0 {
            return Ok((Gradients::zeros_like(self), T::zero()));
        }
        let c = self.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index {
                what: "class logits",
                index: bad,
                len: c,
            });
        }
        self.validate()?;
        let cache = self.forward_cached(x)?;
        let scale: T = reduction.scale(n);
        let mut loss = T::zero();
        let mut dlogits = Matrix::zeros(n, c);
        for i in 0..n {
            let w = weights[i];
            if w == T::zero() {
                continue;
            }
            let row = cache.logits.row(i);
            let logp = log_softmax(row);
            loss = loss + w * (-logp[labels[i]]);
            let out = dlogits.row_mut(i);
            for (k, (o, lp)) in out.iter_mut().zip(&logp).enumerate() {
                let target = if k == labels[i] { T::one() } else { T::zero() };
                *o = w * scale * (lp.exp() - target);
            }
        }
        let grads = self.backward(x, &cache, &dlogits)?;
        Ok((grads, loss * scale))
    }

    /// Gradient of `scale · Σᵢ KL(softmax(tᵢ/τ) ‖ softmax(sᵢ/τ))` with
    /// respect to this (student) classifier. Teacher logits are constants.
    pub fn kd_backward(
        &self,
        x: &Matrix<T>,
        teacher_logits: &Matrix<T>,
        tau: T,
        reduction: Reduction,
    ) -> Result<(Gradients<T>, T)> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::invalid("tau", format!("{tau} must be positive")));
        }
        let n = x.rows();
        if teacher_logits.shape() != (n, self.classes()) {
            return Err(Error::shape(
                "kd_backward",
                format!("student {}x{}", n, self.classes()),
                format!("teacher {}", teacher_logits.shape_str()),
            ));
        }
        if n == 0 {
            return Ok((Gradients::zeros_like(self), T::zero()));
        }
        self.validate()?;
        let cache = self.forward_cached(x)?;
        let scale: T = reduction.scale(n);
        let inv_tau = T::one() / tau;
        let mut loss = T::zero();
        let mut dlogits = Matrix::zeros(n, self.classes());
        for i in 0..n {
            let t: Vec<T> = teacher_logits.row(i).iter().map(|&v| v * inv_tau).collect();
            let s: Vec<T> = cache.logits.row(i).iter().map(|&v| v * inv_tau).collect();
            let log_p = log_softmax(&t);
            let log_q = log_softmax(&s);
            let p = stable_softmax(&t);
            let mut kl = T::zero();
            for k in 0..p.len() {
                if p[k] > T::zero() {
                    kl = kl + p[k] * (log_p[k] - log_q[k]);
                }
            }
            loss = loss + kl.max(T::zero());
            // d KL / d s = (q - p) / τ
            let q = stable_softmax(&s);
            let out = dlogits.row_mut(i);
            for k in 0..p.len() {
                out[k] = scale * inv_tau * (q[k] - p[k]);
            }
        }
        let grads = self.backward(x, &cache, &dlogits)?;
        Ok((grads, loss * scale))
    }

    /// One Adam update with learning rate `lr`.
    pub fn adam_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        grads.check_shapes(self)?;
        let Self { w1, b1, w2, b2, adam } = self;
        adam.step(
            [w1.data_mut(), b1.as_mut_slice(), w2.data_mut(), b2.as_mut_slice()],
            grads.slices(),
            lr,
        );
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("adam_step"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    /// Parameters flattened in the order W1, b1, W2, b2 (row-major).
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out
    }

    /// Inverse of [`params_flat`](Self::params_flat). Leaves Adam state alone.
    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "set_params_flat",
                format!("{} params", self.num_params()),
                format!("{} values", flat.len()),
            ));
        }
        let mut rest = flat;
        for dst in [self.w1.data_mut(), self.b1.as_mut_slice(), self.w2.data_mut(), self.b2.as_mut_slice()] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}
