//! Trunk/head models and their three pass procedures.
//!
//! Parameters are partitioned into a trunk `θ_T` (everything before the last
//! linear layer) and a head `θ_H = (W_a, bias)`. Every model exposes:
//!
//! * `forward`: full pass that keeps what `backward` needs,
//! * `cheap_forward`: activations and outputs only, optionally in single precision,
//! * `backward`: exact loss gradient from a forward cache and the output residual.
//!
//! The flattened parameter vector is `θ_T` followed by the head as a
//! `C × (D+1)` row-major matrix whose row `c` is `[W_a[c, ..], bias[c]]`. The
//! same layout is used for flattened gradients.

pub mod gradcheck;
mod linear;
mod loss;
mod mlp;

pub use linear::{LinearCache, LinearModel, LinearModelConfig};
pub use loss::{loss_and_residual, LossKind, Target};
pub use mlp::{Activation, ForwardCache, Network, NetworkConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::linalg::Matrix;

/// Whether an estimate came from a real backward pass or from a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientSource {
    TrueBackward,
    Predicted,
}

/// Loss gradient split into its trunk and head parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub trunk: Vec<f64>,
    /// `C × (D+1)`; the last column is the bias gradient.
    pub head: Matrix,
    pub source: GradientSource,
}

impl GradientEstimate {
    pub fn zeros(trunk_len: usize, outputs: usize, features: usize, source: GradientSource) -> Self {
        Self {
            trunk: vec![0.0; trunk_len],
            head: Matrix::zeros(outputs, features + 1),
            source,
        }
    }

    /// Trunk followed by the row-major head.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trunk.len() + self.head.as_slice().len());
        out.extend_from_slice(&self.trunk);
        out.extend_from_slice(self.head.as_slice());
        out
    }

    pub fn len(&self) -> usize {
        self.trunk.len() + self.head.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.iter().all(|v| v.is_finite()) && self.head.is_finite()
    }
}

/// `[a; 1]`: activations with the bias coordinate appended last.
pub fn augment(llh: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(llh.len() + 1);
    z.extend_from_slice(llh);
    z.push(1.0);
    z
}

/// Closed-form head gradient `residual ⊗ [llh; 1]`.
pub fn head_gradient(residual: &[f64], llh: &[f64]) -> Matrix {
    crate::linalg::outer(residual, &augment(llh))
}

/// Output of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<C> {
    /// Last-hidden-layer activations `a(x)`.
    pub llh: Vec<f64>,
    pub output: Vec<f64>,
    pub cache: C,
}

/// A model with a trunk/head parameter partition.
pub trait Model: Clone + Send + Sync {
    type Cache: Send + Sync;

    fn input_dim(&self) -> usize;
    /// `C`
    fn output_dim(&self) -> usize;
    /// `D`, the width of the activations feeding the head.
    fn feature_dim(&self) -> usize;
    /// `P_T`
    fn trunk_len(&self) -> usize;

    fn param_count(&self) -> usize {
        self.trunk_len() + self.output_dim() * (self.feature_dim() + 1)
    }

    /// Increments on every parameter update.
    fn version(&self) -> u64;

    /// `W_a`, `C × D`.
    fn head_weight(&self) -> &Matrix;

    fn forward(&self, x: &[f64]) -> Result<ForwardPass<Self::Cache>>;

    /// Returns `(llh, output)`.
    fn cheap_forward(&self, x: &[f64], reduce_precision: bool) -> Result<(Vec<f64>, Vec<f64>)>;

    fn backward(&self, cache: &Self::Cache, residual: &[f64]) -> Result<GradientEstimate>;

    /// Flattened `θ` in the layout described at module level.
    fn params(&self) -> Vec<f64>;

    /// Replaces `θ` and bumps the version.
    fn set_params(&mut self, theta: &[f64]) -> Result<()>;
}

/// Splits a flattened head block into `(W_a, bias)`.
pub(crate) fn split_head(head: &[f64], outputs: usize, features: usize) -> Result<(Matrix, Vec<f64>)> {
    check_dim("head block length", outputs * (features + 1), head.len())?;
    let mut w = Matrix::zeros(outputs, features);
    let mut b = Vec::with_capacity(outputs);
    for (c, row) in head.chunks_exact(features + 1).enumerate() {
        w.row_mut(c).copy_from_slice(&row[..features]);
        b.push(row[features]);
    }
    Ok((w, b))
}

pub(crate) fn join_head(weight: &Matrix, bias: &[f64], out: &mut Vec<f64>) {
    for (c, &bc) in bias.iter().enumerate() {
        out.extend_from_slice(weight.row(c));
        out.push(bc);
    }
}
