use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment accumulators with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct AdamState<T> {
    pub first: Gradients<T>,
    pub second: Gradients<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(w1: (usize, usize), w2: (usize, usize)) -> Self {
        Self {
            first: Gradients::zeros(w1, w2),
            second: Gradients::zeros(w1, w2),
            step: 0,
            beta1: T::lit(BETA1),
            beta2: T::lit(BETA2),
            eps: T::lit(EPSILON),
        }
    }

    pub(super) fn check_shapes(&self, w1: (usize, usize), w2: (usize, usize)) -> Result<()> {
        for g in [&self.first, &self.second] {
            if g.w1.shape() != w1 || g.w2.shape() != w2 || g.b1.len() != w1.1 || g.b2.len() != w2.1 {
                return Err(Error::shape(
                    "adam moments",
                    format!("{}x{} / {}x{}", w1.0, w1.1, w2.0, w2.1),
                    format!("{} / {}", g.w1.shape_str(), g.w2.shape_str()),
                ));
            }
        }
        Ok(())
    }

    /// Updates `params` in place. Slices are paired positionally with the
    /// moment buffers (W1, b1, W2, b2).
    pub(super) fn step(&mut self, params: [&mut [T]; 4], grads: [&[T]; 4], lr: T) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let correct1 = T::one() - b1.powi(t);
        let correct2 = T::one() - b2.powi(t);
        let firsts = [
            self.first.w1.data_mut(),
            self.first.b1.as_mut_slice(),
            self.first.w2.data_mut(),
            self.first.b2.as_mut_slice(),
        ];
        let seconds = [
            self.second.w1.data_mut(),
            self.second.b1.as_mut_slice(),
            self.second.w2.data_mut(),
            self.second.b2.as_mut_slice(),
        ];
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
