//! Equal-budget comparison of the two loops.

use serde::{Deserialize, Serialize};

use super::run::{Algorithm, StopReason, Trainer};
use super::step::full_gradient;
use super::{evaluate, StepRecord, TrainConfig};
use crate::analysis::{break_even_satisfied, gamma, rho_star};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub steps: u64,
    pub cost_units: f64,
    /// Mean loss over the full training split after the last step.
    pub final_train_loss: f64,
    pub final_val_metric: f64,
    pub stop: String,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub budget: f64,
    pub control_fraction: f64,
    pub gamma: f64,
    pub vanilla: RunSummary,
    pub predicted: RunSummary,
    /// Mean of the finite per-step trunk-only estimates.
    pub rho_hat_mean: f64,
    pub kappa_hat_mean: f64,
    pub rho_hat_full_mean: f64,
    pub kappa_hat_full_mean: f64,
    /// Break-even alignment at the measured `κ̂`.
    pub rho_star: f64,
    /// `φ(f, ρ̂, κ̂)·γ(f) ≤ 1` for the measured trunk-only statistics.
    pub break_even: bool,
    pub predicted_not_worse: bool,
}

impl ComparisonReport {
    /// The break-even verdict agrees with the observed outcome.
    pub fn consistent(&self) -> bool {
        self.break_even == self.predicted_not_worse
    }
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize<M: Model>(cfg: &TrainConfig, data: &Dataset, algorithm: Algorithm, model: M) -> Result<RunSummary> {
    let mut trainer = Trainer::new(cfg.clone(), data, model, algorithm)?;
    let outcome = trainer.run(&mut |_| Ok(()))?;
    let state = trainer.into_state();
    let (final_train_loss, _) = full_gradient(
        &state.model,
        data,
        &data.train,
        cfg.loss,
        cfg.label_smoothing,
        cfg.execution,
    )?;
    let final_val_metric = evaluate(
        &state.model,
        data,
        &data.validation,
        cfg.loss,
        cfg.label_smoothing,
        cfg.execution,
    )?;
    Ok(RunSummary {
        algorithm,
        steps: state.step,
        cost_units: state.ledger.cost_units,
        final_train_loss,
        final_val_metric,
        stop: match outcome.stop {
            StopReason::EpochsDone => "epochs",
            StopReason::BudgetExhausted => "budget",
            StopReason::MaxSteps => "max_steps",
        }
        .into(),
        records: outcome.records,
    })
}

/// Trains both algorithms from the same initial model until each exhausts
/// `cfg.budget`, then applies the break-even test to the measured alignment.
pub fn run_budgeted_comparison<M: Model>(cfg: &TrainConfig, data: &Dataset, model: M) -> Result<ComparisonReport> {
    let budget = cfg
        .budget
        .ok_or_else(|| Error::Budget("a budget is required for a comparison".into()))?;
    let vanilla = summarize(cfg, data, Algorithm::Vanilla, model.clone())?;
    let predicted = summarize(cfg, data, Algorithm::Predicted, model)?;
    let f = cfg.control_fraction;
    let rho = finite_mean(predicted.records.iter().map(|r| r.rho_hat));
    let kappa = finite_mean(predicted.records.iter().map(|r| r.kappa_hat));
    let (rho_star_value, break_even) = if f >= 1.0 {
        (f64::NAN, true)
    } else if rho.is_finite() && kappa > 0.0 {
        (
            rho_star(&cfg.cost_model, f, kappa)?,
            break_even_satisfied(&cfg.cost_model, f, rho.clamp(-1.0, 1.0), kappa)?,
        )
    } else {
        (f64::NAN, false)
    };
    Ok(ComparisonReport {
        budget,
        control_fraction: f,
        gamma: gamma(&cfg.cost_model, f)?,
        rho_hat_mean: rho,
        kappa_hat_mean: kappa,
        rho_hat_full_mean: finite_mean(predicted.records.iter().map(|r| r.rho_hat_full)),
        kappa_hat_full_mean: finite_mean(predicted.records.iter().map(|r| r.kappa_hat_full)),
        rho_star: rho_star_value,
        break_even,
        predicted_not_worse: predicted.final_train_loss <= vanilla.final_train_loss,
        vanilla,
        predicted,
    })
}
