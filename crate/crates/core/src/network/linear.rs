use serde::{Deserialize, Serialize};

use super::{head_gradient, join_head, split_head, ForwardPass, GradientEstimate, GradientSource, Model};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, outer, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearModelConfig {
    /// Leading input coordinates, weighted by the trunk.
    pub trunk_inputs: usize,
    /// Trailing input coordinates; these are the head features `a(x)`.
    pub head_inputs: usize,
    pub outputs: usize,
}

/// `f(x) = W_T x_T + W_a x_H + b` for `x = [x_T; x_H]`.
///
/// Linear in every parameter, so squared loss plus an L2 penalty is strongly
/// convex with a closed-form minimizer. The head features are the raw trailing
/// inputs, which gives a trunk/head split with no hidden nonlinearity.
/// Trunk layout: `W_T` as a `C × d_T` row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    config: LinearModelConfig,
    trunk_weight: Matrix,
    head_weight: Matrix,
    head_bias: Vec<f64>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    x: Vec<f64>,
    version: u64,
}

impl LinearModel {
    pub fn zeros(config: LinearModelConfig) -> Result<Self> {
        if config.trunk_inputs == 0 || config.head_inputs == 0 || config.outputs == 0 {
            return Err(Error::Config("linear model dimensions must be >= 1".into()));
        }
        Ok(Self {
            trunk_weight: Matrix::zeros(config.outputs, config.trunk_inputs),
            head_weight: Matrix::zeros(config.outputs, config.head_inputs),
            head_bias: vec![0.0; config.outputs],
            config,
            version: 0,
        })
    }

    pub fn config(&self) -> LinearModelConfig {
        self.config
    }

    fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (xt, xh) = x.split_at(self.config.trunk_inputs);
        let out = (0..self.config.outputs)
            .map(|c| dot(self.trunk_weight.row(c), xt) + dot(self.head_weight.row(c), xh) + self.head_bias[c])
            .collect();
        (xh.to_vec(), out)
    }
}

impl Model for LinearModel {
    type Cache = LinearCache;

    fn input_dim(&self) -> usize {
        self.config.trunk_inputs + self.config.head_inputs
    }

    fn output_dim(&self) -> usize {
        self.config.outputs
    }

    fn feature_dim(&self) -> usize {
        self.config.head_inputs
    }

    fn trunk_len(&self) -> usize {
        self.config.outputs * self.config.trunk_inputs
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn head_weight(&self) -> &Matrix {
        &self.head_weight
    }

    fn forward(&self, x: &[f64]) -> Result<ForwardPass<LinearCache>> {
        check_dim("linear model input", self.input_dim(), x.len())?;
        let (llh, output) = self.eval(x);
        Ok(ForwardPass {
            llh,
            output,
            cache: LinearCache {
                x: x.to_vec(),
                version: self.version,
            },
        })
    }

    fn cheap_forward(&self, x: &[f64], reduce_precision: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("linear model input", self.input_dim(), x.len())?;
        if !reduce_precision {
            return Ok(self.eval(x));
        }
        let (xt, xh) = x.split_at(self.config.trunk_inputs);
        let dot32 = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(&a, &b)| a as f32 * b as f32).sum::<f32>();
        let out = (0..self.config.outputs)
            .map(|c| {
                f64::from(
                    dot32(self.trunk_weight.row(c), xt) + dot32(self.head_weight.row(c), xh) + self.head_bias[c] as f32,
                )
            })
            .collect();
        Ok((xh.iter().map(|&v| f64::from(v as f32)).collect(), out))
    }

    fn backward(&self, cache: &LinearCache, residual: &[f64]) -> Result<GradientEstimate> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                current: self.version,
            });
        }
        check_dim("residual", self.config.outputs, residual.len())?;
        let (xt, xh) = cache.x.split_at(self.config.trunk_inputs);
        Ok(GradientEstimate {
            trunk: outer(residual, xt).into_vec(),
            head: head_gradient(residual, xh),
            source: GradientSource::TrueBackward,
        })
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.trunk_weight.as_slice());
        join_head(&self.head_weight, &self.head_bias, &mut out);
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_count(), theta.len())?;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("parameter update produced non-finite values".into()));
        }
        let (trunk, head) = theta.split_at(self.trunk_len());
        let (w, b) = split_head(head, self.config.outputs, self.config.head_inputs)?;
        self.trunk_weight.as_mut_slice().copy_from_slice(trunk);
        self.head_weight = w;
        self.head_bias = b;
        self.version += 1;
        Ok(())
    }
}
