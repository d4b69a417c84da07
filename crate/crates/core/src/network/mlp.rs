use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{head_gradient, join_head, split_head, ForwardPass, GradientEstimate, GradientSource, Model};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// Linear hidden layers; used for exactly low-rank constructions.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn apply_f32(self, z: f32) -> f32 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::Config(
                "hidden_widths must be non-empty: the trunk must exist".into(),
            ));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("all layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every trunk layer.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim;
        self.hidden_widths
            .iter()
            .map(|&w| {
                let shape = (fan_in, w);
                fan_in = w;
                shape
            })
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden_widths.last().expect("validated non-empty")
    }

    pub fn trunk_len(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn head_len(&self) -> usize {
        self.output_dim * (self.feature_dim() + 1)
    }
}

/// Multilayer perceptron whose last linear layer is the head.
///
/// Trunk layout: for each hidden layer in order, the `out × in` row-major
/// weight followed by the `out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    trunk: Vec<f64>,
    head_weight: Matrix,
    head_bias: Vec<f64>,
    /// `(offset, fan_in, fan_out)` per trunk layer.
    layers: Vec<(usize, usize, usize)>,
    version: u64,
}

/// Per-layer inputs and pre-activations for one example.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` feeds layer `l`; the last entry is `llh`.
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    version: u64,
}

impl ForwardCache {
    pub fn layer_count(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

impl Network {
    /// Glorot-uniform weights, `U(±sqrt(6 / (fan_in + fan_out)))`, drawn layer
    /// by layer in row-major order from the `init` substream of `config.seed`;
    /// all biases zero.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(config.seed, stream::INIT);
        let mut net = Self::zeros(config)?;
        for &(offset, fan_in, fan_out) in &net.layers {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.trunk[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        let (d, c) = (net.config.feature_dim(), net.config.output_dim);
        let bound = (6.0 / (d + c) as f64).sqrt();
        for w in net.head_weight.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
        Ok(net)
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in config.layer_shapes() {
            layers.push((offset, fan_in, fan_out));
            offset += fan_in * fan_out + fan_out;
        }
        let (d, c) = (config.feature_dim(), config.output_dim);
        Ok(Self {
            trunk: vec![0.0; offset],
            head_weight: Matrix::zeros(c, d),
            head_bias: vec![0.0; c],
            layers,
            config,
            version: 0,
        })
    }

    /// Assembles a network from explicit parameter blocks.
    pub fn from_parts(
        config: NetworkConfig,
        trunk: Vec<f64>,
        head_weight: Matrix,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        check_dim("trunk length", net.trunk.len(), trunk.len())?;
        check_dim("head weight rows", net.config.output_dim, head_weight.rows())?;
        check_dim("head weight cols", net.config.feature_dim(), head_weight.cols())?;
        check_dim("head bias length", net.config.output_dim, head_bias.len())?;
        if !trunk.iter().chain(&head_bias).all(|v| v.is_finite()) || !head_weight.is_finite() {
            return Err(Error::Config("network parameters must be finite".into()));
        }
        net.trunk = trunk;
        net.head_weight = head_weight;
        net.head_bias = head_bias;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn trunk(&self) -> &[f64] {
        &self.trunk
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    /// `(weight, bias)` of trunk layer `l`; the weight is `fan_out × fan_in` row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (offset, fan_in, fan_out) = self.layers[l];
        let w_end = offset + fan_in * fan_out;
        (&self.trunk[offset..w_end], &self.trunk[w_end..w_end + fan_out])
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Restores a saved version counter (checkpoint loading).
    pub(crate) fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("network input", self.config.input_dim, x.len())
    }

    /// Shared double-precision pass; `cache` receives per-layer buffers when present.
    fn run(&self, x: &[f64], mut cache: Option<&mut ForwardCache>) -> (Vec<f64>, Vec<f64>) {
        let act = self.config.activation;
        let mut a = x.to_vec();
        for &(offset, fan_in, fan_out) in &self.layers {
            let w = &self.trunk[offset..offset + fan_in * fan_out];
            let b = &self.trunk[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], &a) + b[o])
                .collect();
            let next: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(std::mem::replace(&mut a, next));
                c.pre_activations.push(z);
            } else {
                a = next;
            }
        }
        let output: Vec<f64> = (0..self.config.output_dim)
            .map(|c| dot(self.head_weight.row(c), &a) + self.head_bias[c])
            .collect();
        if let Some(c) = cache {
            c.inputs.push(a.clone());
        }
        (a, output)
    }

    fn run_f32(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let act = self.config.activation;
        let mut a: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        for &(offset, fan_in, fan_out) in &self.layers {
            let w = &self.trunk[offset..offset + fan_in * fan_out];
            let b = &self.trunk[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            a = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = row.iter().zip(&a).map(|(&wi, &ai)| wi as f32 * ai).sum::<f32>() + b[o] as f32;
                    act.apply_f32(z)
                })
                .collect();
        }
        let output = (0..self.config.output_dim)
            .map(|c| {
                let row = self.head_weight.row(c);
                let o = row.iter().zip(&a).map(|(&wi, &ai)| wi as f32 * ai).sum::<f32>() + self.head_bias[c] as f32;
                f64::from(o)
            })
            .collect();
        (a.into_iter().map(f64::from).collect(), output)
    }
}

impl Model for Network {
    type Cache = ForwardCache;

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    fn trunk_len(&self) -> usize {
        self.trunk.len()
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn head_weight(&self) -> &Matrix {
        &self.head_weight
    }

    fn forward(&self, x: &[f64]) -> Result<ForwardPass<ForwardCache>> {
        self.check_input(x)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len() + 1),
            pre_activations: Vec::with_capacity(self.layers.len()),
            version: self.version,
        };
        let (llh, output) = self.run(x, Some(&mut cache));
        Ok(ForwardPass { llh, output, cache })
    }

    fn cheap_forward(&self, x: &[f64], reduce_precision: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        Ok(if reduce_precision {
            self.run_f32(x)
        } else {
            self.run(x, None)
        })
    }

    fn backward(&self, cache: &ForwardCache, residual: &[f64]) -> Result<GradientEstimate> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                current: self.version,
            });
        }
        check_dim("cache layer count", self.layers.len(), cache.layer_count())?;
        check_dim("residual", self.config.output_dim, residual.len())?;
        let act = self.config.activation;
        let llh = cache.inputs.last().expect("forward records llh");
        let head = head_gradient(residual, llh);

        // δ at the last hidden layer is W_aᵀ r.
        let mut delta = self.head_weight.tr_matvec(residual)?;
        let mut trunk = vec![0.0; self.trunk.len()];
        for (l, &(offset, fan_in, fan_out)) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let a_out = &cache.inputs[l + 1];
            let input = &cache.inputs[l];
            let dz: Vec<f64> = (0..fan_out)
                .map(|o| delta[o] * act.derivative(z[o], a_out[o]))
                .collect();
            let w = &self.trunk[offset..offset + fan_in * fan_out];
            let (gw, gb) = trunk[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let g_row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, &xi) in g_row.iter_mut().zip(input) {
                    *g = dz[o] * xi;
                }
                gb[o] = dz[o];
            }
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    if dz[o] != 0.0 {
                        crate::linalg::axpy(dz[o], &w[o * fan_in..(o + 1) * fan_in], &mut prev);
                    }
                }
                delta = prev;
            }
        }
        Ok(GradientEstimate {
            trunk,
            head,
            source: GradientSource::TrueBackward,
        })
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.trunk);
        join_head(&self.head_weight, &self.head_bias, &mut out);
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_count(), theta.len())?;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("parameter update produced non-finite values".into()));
        }
        let (trunk, head) = theta.split_at(self.trunk.len());
        let (w, b) = split_head(head, self.config.output_dim, self.config.feature_dim())?;
        self.trunk.copy_from_slice(trunk);
        self.head_weight = w;
        self.head_bias = b;
        self.version += 1;
        Ok(())
    }
}
