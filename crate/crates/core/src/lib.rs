//! Predicted gradient descent.
//!
//! Training with cheap linear gradient predictions that are debiased by a
//! control variate, together with executable forms of the variance, cost and
//! break-even analysis that govern when the scheme pays off.
//!
//! * [`linalg`]: dense kernel (ridge solves, truncated SVD, cosine).
//! * [`network`]: trunk/head models with `forward`, `cheap_forward` and `backward`.
//! * [`predictor`]: scalar (`M`) and structured (`U`, `S_i`) gradient predictors.
//! * [`estimator`]: the debiased combiner and alignment statistics.
//! * [`analysis`]: cost model, bounds, break-even thresholds, Monte Carlo verifier.
//! * [`trainer`]: predicted and vanilla training loops with cost accounting.
//! * [`data`]: synthetic datasets and CSV ingestion.
//! * [`checkpoint`]: exact save and resume of a training run.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod network;
pub mod parallel;
pub mod predictor;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use parallel::Execution;
