use serde::{Deserialize, Serialize};

use super::ClassifierState;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// One value per classifier parameter, laid out like the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Gradients<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(w1: (usize, usize), w2: (usize, usize)) -> Self {
        Self {
            w1: Matrix::zeros(w1.0, w1.1),
            b1: vec![T::zero(); w1.1],
            w2: Matrix::zeros(w2.0, w2.1),
            b2: vec![T::zero(); w2.1],
        }
    }

    pub fn zeros_like(state: &ClassifierState<T>) -> Self {
        Self::zeros(state.w1.shape(), state.w2.shape())
    }

    pub fn slices(&self) -> [&[T]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [T]; 4] {
        [self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().concat()
    }

    pub fn scale(&mut self, s: T) {
        for part in self.slices_mut() {
            part.iter_mut().for_each(|v| *v = *v * s);
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Gradients<T>, s: T) -> Result<()> {
        if self.w1.shape() != other.w1.shape() || self.w2.shape() != other.w2.shape() {
            return Err(Error::shape(
                "Gradients::add_scaled",
                format!("{} / {}", self.w1.shape_str(), self.w2.shape_str()),
                format!("{} / {}", other.w1.shape_str(), other.w2.shape_str()),
            ));
        }
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &g) in dst.iter_mut().zip(src) {
                *d = *d + s * g;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> T {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub(crate) fn check_shapes(&self, state: &ClassifierState<T>) -> Result<()> {
        if self.w1.shape() != state.w1.shape()
            || self.w2.shape() != state.w2.shape()
            || self.b1.len() != state.b1.len()
            || self.b2.len() != state.b2.len()
        {
            return Err(Error::shape(
                "gradients vs parameters",
                format!("{} / {}", self.w1.shape_str(), self.w2.shape_str()),
                format!("{} / {}", state.w1.shape_str(), state.w2.shape_str()),
            ));
        }
        Ok(())
    }
}
