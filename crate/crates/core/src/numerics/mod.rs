//! Dense matrices, stable loss kernels, the seeded random stream and the
//! finite-difference gradient checker.

mod finite_diff;
mod loss;
mod matrix;
mod rng;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

pub use finite_diff::finite_diff_check;
pub use loss::{cross_entropy, kl_divergence, log_softmax, softmax_rows, stable_softmax};
pub use matrix::{matmul, Matrix};
pub use rng::RngStream;

/// Floating-point scalar the numeric kernels are written against.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal. Lossy for `f32`.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
