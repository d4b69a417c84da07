//! Vanilla and predicted-gradient training loops.
//!
//! Both loops share the epoch shuffle stream, so with the same seed they visit
//! the same mini-batches. The predicted loop additionally draws a control /
//! prediction split per batch from its own stream, runs `forward + backward`
//! on the control side and `cheap_forward` plus the predictor on the rest, and
//! steps along the debiased combination.
//!
//! Cost is charged per example from pass counts: `c_f + c_b` for every true
//! gradient and `c_cf` for every predicted one.

mod compare;
mod run;
mod step;

pub use compare::{run_budgeted_comparison, ComparisonReport, RunSummary};
pub use run::{Algorithm, RunOutcome, RunState, StopReason, Trainer};
pub use step::{combined_gradient, evaluate, full_gradient, oracle_gradient, PredictionSource};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::CostModel;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::network::{LossKind, Model};
use crate::parallel::Execution;
use crate::predictor::{Predictor, PredictorKind, RefitPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    SgdMomentum,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "sgd_momentum" | "momentum" => Ok(OptimizerKind::SgdMomentum),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Momentum buffer; empty until the first momentum step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub buffer: Vec<f64>,
}

/// `θ ← θ − lr·g`, or with momentum `b ← μ·b + g`, `θ ← θ − lr·b`.
pub fn optimizer_step(
    kind: OptimizerKind,
    theta: &mut [f64],
    g: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_dim("gradient length", theta.len(), g.len())?;
    match kind {
        OptimizerKind::Sgd => {
            theta.iter_mut().zip(g).for_each(|(t, gi)| *t -= lr * gi);
        }
        OptimizerKind::SgdMomentum => {
            if state.buffer.is_empty() {
                state.buffer = vec![0.0; theta.len()];
            }
            check_dim("momentum buffer length", theta.len(), state.buffer.len())?;
            for ((t, b), gi) in theta.iter_mut().zip(state.buffer.iter_mut()).zip(g) {
                *b = momentum * *b + gi;
                *t -= lr * *b;
            }
        }
    }
    Ok(())
}

/// Where predicted gradients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorMode {
    Fitted(PredictorKind),
    /// Predictions are exact gradients from a hidden `forward + backward`.
    /// The ledger still charges the cheap pass; this mode exists to check the
    /// loop against vanilla training.
    Perfect,
}

impl fmt::Display for PredictorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorMode::Fitted(k) => write!(f, "{k}"),
            PredictorMode::Perfect => f.write_str("perfect"),
        }
    }
}

impl FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(PredictorMode::Perfect),
            other => other.parse().map(PredictorMode::Fitted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    /// Control fraction `f`; ignored by vanilla training.
    pub control_fraction: f64,
    pub loss: LossKind,
    pub label_smoothing: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step `t` (0-based) uses `lr / (1 + lr_decay·t)`.
    pub lr_decay: f64,
    /// L2 penalty `½·wd·‖θ‖²` added to the loss; applied to every parameter.
    pub weight_decay: f64,
    pub refit: RefitPolicy,
    pub predictor: PredictorMode,
    pub cost_model: CostModel,
    /// Cost-unit cap; a step is taken only if it fits entirely.
    pub budget: Option<f64>,
    pub max_steps: Option<u64>,
    pub seed: u64,
    /// Run `cheap_forward` in single precision.
    pub reduce_precision: bool,
    /// Fit the predictor on one full-backward batch before the first step.
    pub warmup: bool,
    /// Evaluate the validation metric every this many steps.
    pub eval_every: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            control_fraction: 0.25,
            loss: LossKind::SquaredScalar,
            label_smoothing: 0.0,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            momentum: 0.0,
            lr_decay: 0.0,
            weight_decay: 0.0,
            refit: RefitPolicy::default(),
            predictor: PredictorMode::Fitted(PredictorKind::Structured { rank: None }),
            cost_model: CostModel::default(),
            budget: None,
            max_steps: None,
            seed: 0,
            reduce_precision: false,
            warmup: true,
            eval_every: 1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Checks the configuration against itself, the data and the model.
    pub fn validate<M: Model>(&self, data: &Dataset, model: &M, algorithm: Algorithm) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr_decay >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr_decay and weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        self.cost_model.validate()?;
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return Err(Error::Budget(format!("budget must be positive, got {b}")));
            }
        }
        if algorithm == Algorithm::Predicted {
            if !(self.control_fraction > 0.0 && self.control_fraction <= 1.0) {
                return Err(Error::Domain(format!(
                    "control fraction must lie in (0, 1], got {}",
                    self.control_fraction
                )));
            }
            crate::estimator::control_size(self.batch_size.min(data.train.len().max(1)), self.control_fraction)?;
            self.refit.validate(model.feature_dim())?;
            if self.predictor == PredictorMode::Fitted(PredictorKind::Scalar) && model.output_dim() != 1 {
                return Err(Error::Config("the scalar predictor needs a single model output".into()));
            }
        }
        if data.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        check_dim("model input", data.input_dim(), model.input_dim())?;
        check_dim("model output", data.output_dim(), model.output_dim())?;
        match (data.classes.is_some(), self.loss) {
            (true, LossKind::CrossEntropy) | (false, LossKind::SquaredScalar | LossKind::SquaredVector) => {}
            _ => {
                return Err(Error::Config(format!(
                    "loss {} does not match a {} dataset",
                    self.loss,
                    if data.classes.is_some() {
                        "classification"
                    } else {
                        "regression"
                    }
                )))
            }
        }
        Ok(())
    }

    /// Learning rate of step `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * t as f64)
    }
}

/// Pass counts and the cost they imply.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub forward: u64,
    pub cheap_forward: u64,
    pub backward: u64,
    pub cost_units: f64,
}

impl BudgetLedger {
    /// `n` examples through `forward + backward`.
    pub fn charge_true(&mut self, n: usize, cm: &CostModel) {
        self.forward += n as u64;
        self.backward += n as u64;
        self.recompute(cm);
    }

    /// `n` examples through `cheap_forward`.
    pub fn charge_cheap(&mut self, n: usize, cm: &CostModel) {
        self.cheap_forward += n as u64;
        self.recompute(cm);
    }

    fn recompute(&mut self, cm: &CostModel) {
        self.cost_units = self.forward as f64 * cm.forward
            + self.backward as f64 * cm.backward
            + self.cheap_forward as f64 * cm.cheap_forward;
    }
}

/// Telemetry for one optimizer step.
///
/// `rho_hat`, `kappa_hat` and `phi_hat` come from the control-batch pairs
/// restricted to trunk coordinates; the `_full` variants use the whole
/// parameter vector. All six are NaN for vanilla steps and when the control
/// batch has fewer than two examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based count of optimizer steps.
    pub step: u64,
    /// 0-based epoch the step belongs to.
    pub epoch: u64,
    /// Ledger total after this step.
    pub cost_units: f64,
    /// Mean training loss over the mini-batch (before the step).
    pub loss: f64,
    /// Accuracy for classification, mean loss for regression; carried
    /// forward between evaluations.
    pub val_metric: f64,
    pub rho_hat: f64,
    pub kappa_hat: f64,
    pub phi_hat: f64,
    pub rho_hat_full: f64,
    pub kappa_hat_full: f64,
    pub phi_hat_full: f64,
    /// The predictor was refit after this step.
    pub refit: bool,
}

impl StepRecord {
    /// Bitwise equality, treating NaN fields as equal to themselves.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let a = [
            self.cost_units,
            self.loss,
            self.val_metric,
            self.rho_hat,
            self.kappa_hat,
            self.phi_hat,
            self.rho_hat_full,
            self.kappa_hat_full,
            self.phi_hat_full,
        ];
        let b = [
            other.cost_units,
            other.loss,
            other.val_metric,
            other.rho_hat,
            other.kappa_hat,
            other.phi_hat,
            other.rho_hat_full,
            other.kappa_hat_full,
            other.phi_hat_full,
        ];
        self.step == other.step
            && self.epoch == other.epoch
            && self.refit == other.refit
            && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }
}

pub const METRICS_HEADER: [&str; 12] = [
    "step",
    "epoch",
    "cost_units",
    "loss",
    "val_metric",
    "rho_hat",
    "kappa_hat",
    "phi_hat",
    "rho_hat_full",
    "kappa_hat_full",
    "phi_hat_full",
    "refit",
];

/// Appends one CSV row per [`StepRecord`], header first.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(METRICS_HEADER).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, r: &StepRecord) -> Result<()> {
        self.inner
            .write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.cost_units.to_string(),
                r.loss.to_string(),
                r.val_metric.to_string(),
                r.rho_hat.to_string(),
                r.kappa_hat.to_string(),
                r.phi_hat.to_string(),
                r.rho_hat_full.to_string(),
                r.kappa_hat_full.to_string(),
                r.phi_hat_full.to_string(),
                u8::from(r.refit).to_string(),
            ])
            .map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = MetricsWriter::new(out)?;
    records.iter().try_for_each(|r| w.push(r))
}

/// Algorithm 2: plain mini-batch SGD on true gradients.
pub fn train_vanilla<M: Model>(cfg: &TrainConfig, data: &Dataset, model: M) -> Result<(M, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(cfg.clone(), data, model, Algorithm::Vanilla)?;
    let outcome = trainer.run(&mut |_| Ok(()))?;
    Ok((trainer.into_state().model, outcome.records))
}

/// Predicted gradients debiased on a control micro-batch.
///
/// `predictor` seeds the fitted mode; without one, `cfg.warmup` must be set.
pub fn train_predicted<M: Model>(
    cfg: &TrainConfig,
    data: &Dataset,
    model: M,
    predictor: Option<Predictor>,
) -> Result<(M, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(cfg.clone(), data, model, Algorithm::Predicted)?;
    trainer.state_mut().predictor = predictor;
    let outcome = trainer.run(&mut |_| Ok(()))?;
    Ok((trainer.into_state().model, outcome.records))
}

#[cfg(test)]
mod tests;
