//! Debiased classifier training with a bootstrapped committee of biased
//! auxiliary classifiers.
//!
//! A committee of small two-layer classifiers is trained on bootstrapped
//! subsets of a biased training set. Because most subsets are dominated by
//! bias-guiding samples, most members learn the shortcut and fail on
//! bias-conflicting samples. The number of members that still predict a
//! sample correctly is turned into a sample weight for the main classifier,
//! and the main classifier's logits are distilled back into the committee so
//! that it debiases along with the main model.
//!
//! Numeric kernels ([`numerics`], [`classifier`], [`committee`]) are generic
//! over [`numerics::Scalar`]; the training harness runs in `f64` through the
//! aliases exported here.

pub mod classifier;
pub mod committee;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod numerics;
pub mod trainer;

#[cfg(test)]
pub(crate) mod oracle;

pub use error::{Error, Result};

/// Dense row-major `f64` matrix.
pub type Matrix = numerics::Matrix<f64>;
/// Two-layer `f64` classifier with its Adam state.
pub type ClassifierState = classifier::ClassifierState<f64>;
/// Parameter gradients of an `f64` classifier.
pub type Gradients = classifier::Gradients<f64>;
/// Committee of `f64` auxiliary classifiers.
pub type Committee = committee::Committee<f64>;

pub use datagen::{BiasedSpec, Dataset, Sample};
pub use metrics::MetricsReport;
pub use numerics::RngStream;
pub use trainer::{Method, RunLog, TrainConfig};
