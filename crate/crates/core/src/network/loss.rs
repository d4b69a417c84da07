use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// `½ (f(x) − y)²` with a single output.
    SquaredScalar,
    /// `½ ‖f(x) − y‖²`
    SquaredVector,
    /// Softmax cross-entropy with optional label smoothing.
    CrossEntropy,
}

impl LossKind {
    pub fn is_classification(self) -> bool {
        self == LossKind::CrossEntropy
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SquaredScalar => "squared_scalar",
            LossKind::SquaredVector => "squared_vector",
            LossKind::CrossEntropy => "cross_entropy",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_scalar" => Ok(LossKind::SquaredScalar),
            "squared_vector" => Ok(LossKind::SquaredVector),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Supervision for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// Loss value and output residual `∂l/∂f(x)`.
///
/// Squared losses: residual `f(x) − y`. Cross-entropy: residual
/// `softmax(f(x)) − t` with `t = (1 − s)·onehot(y) + s/C`.
pub fn loss_and_residual(output: &[f64], target: &Target, kind: LossKind, smoothing: f64) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::SquaredScalar | LossKind::SquaredVector, Target::Values(y)) => {
            if kind == LossKind::SquaredScalar {
                check_dim("scalar loss output", 1, output.len())?;
            }
            check_dim("regression target", output.len(), y.len())?;
            let residual: Vec<f64> = output.iter().zip(y).map(|(f, t)| f - t).collect();
            let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
            Ok((loss, residual))
        }
        (LossKind::CrossEntropy, Target::Class(y)) => {
            let classes = output.len();
            if *y >= classes {
                return Err(Error::Label { index: *y, classes });
            }
            if !(0.0..1.0).contains(&smoothing) {
                return Err(Error::Domain(format!(
                    "label smoothing must lie in [0, 1), got {smoothing}"
                )));
            }
            let max = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + output.iter().map(|o| (o - max).exp()).sum::<f64>().ln();
            let uniform = smoothing / classes as f64;
            let mut loss = 0.0;
            let mut residual = Vec::with_capacity(classes);
            for (k, &o) in output.iter().enumerate() {
                let t = if k == *y { 1.0 - smoothing + uniform } else { uniform };
                let log_p = o - lse;
                if t > 0.0 {
                    loss -= t * log_p;
                }
                residual.push(log_p.exp() - t);
            }
            Ok((loss, residual))
        }
        (LossKind::CrossEntropy, Target::Values(_)) => {
            Err(Error::Data("cross-entropy needs a class label target".into()))
        }
        (_, Target::Class(_)) => Err(Error::Data("squared loss needs a real-valued target".into())),
    }
}
