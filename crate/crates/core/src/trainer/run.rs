//! The training loop and its resumable state.

use rand::seq::{index, SliceRandom};

use super::step::{predicted_batch, vanilla_batch, BatchOutcome, StepInputs};
use super::{evaluate, optimizer_step, BudgetLedger, OptimizerState, PredictorMode, StepRecord, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{control_size, split_minibatch};
use crate::network::Model;
use crate::predictor::{should_refit, FitBuffer, Predictor, PredictorKind};
use crate::rng::{stream, substream, Rng};

use super::step::PredictionSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Algorithm {
    Vanilla,
    Predicted,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::Predicted => "predicted",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Algorithm::Vanilla),
            "predicted" => Ok(Algorithm::Predicted),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct RunState<M> {
    pub algorithm: Algorithm,
    pub model: M,
    pub optimizer: OptimizerState,
    pub predictor: Option<Predictor>,
    pub buffer: FitBuffer,
    pub ledger: BudgetLedger,
    /// Optimizer steps taken.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
    /// Visiting order of the current epoch; empty between epochs.
    pub order: Vec<usize>,
    /// Next position in `order`.
    pub cursor: usize,
    pub shuffle_rng: Rng,
    pub split_rng: Rng,
    pub warmup_done: bool,
    pub last_val: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochsDone,
    BudgetExhausted,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    pub stop: StopReason,
}

pub struct Trainer<'d, M: Model> {
    cfg: TrainConfig,
    data: &'d Dataset,
    state: RunState<M>,
}

impl<'d, M: Model> Trainer<'d, M> {
    pub fn new(cfg: TrainConfig, data: &'d Dataset, model: M, algorithm: Algorithm) -> Result<Self> {
        cfg.validate(data, &model, algorithm)?;
        let state = RunState {
            algorithm,
            model,
            optimizer: OptimizerState::default(),
            predictor: None,
            buffer: FitBuffer::new(cfg.refit.buffer_capacity),
            ledger: BudgetLedger::default(),
            step: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            shuffle_rng: substream(cfg.seed, stream::SHUFFLE),
            split_rng: substream(cfg.seed, stream::SPLIT),
            warmup_done: false,
            last_val: f64::NAN,
        };
        Ok(Self { cfg, data, state })
    }

    /// Continues from a saved state. `cfg` may extend `epochs`, `budget` or
    /// `max_steps`; other fields should match the original run.
    pub fn resume(cfg: TrainConfig, data: &'d Dataset, state: RunState<M>) -> Result<Self> {
        cfg.validate(data, &state.model, state.algorithm)?;
        if state.order.iter().any(|&i| i >= data.len()) {
            return Err(Error::Checkpoint("saved batch order does not fit the dataset".into()));
        }
        Ok(Self { cfg, data, state })
    }

    pub fn state(&self) -> &RunState<M> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut RunState<M> {
        &mut self.state
    }

    pub fn into_state(self) -> RunState<M> {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn inputs(&self) -> StepInputs<'d> {
        StepInputs {
            data: self.data,
            loss: self.cfg.loss,
            smoothing: self.cfg.label_smoothing,
            reduce_precision: self.cfg.reduce_precision,
            exec: self.cfg.execution,
        }
    }

    fn fitted_kind(&self) -> Option<PredictorKind> {
        match (self.state.algorithm, self.cfg.predictor) {
            (Algorithm::Predicted, PredictorMode::Fitted(k)) => Some(k),
            _ => None,
        }
    }

    /// Smallest batch the predicted loop will take: `max(2, ⌈1/f⌉)`.
    fn min_predicted_batch(&self) -> usize {
        2.max((1.0 / self.cfg.control_fraction).ceil() as usize)
    }

    fn warmup_size(&self) -> usize {
        let d = self.state.model.feature_dim();
        let needed = match self.cfg.predictor {
            PredictorMode::Fitted(PredictorKind::Structured { rank: Some(r) }) => r.max(d + 1),
            _ => d + 1,
        };
        self.cfg.batch_size.max(needed).min(self.data.train.len())
    }

    fn batch_cost(&self, len: usize) -> Result<f64> {
        let cm = &self.cfg.cost_model;
        Ok(match self.state.algorithm {
            Algorithm::Vanilla => cm.vanilla_batch(len),
            Algorithm::Predicted => {
                let (m_c, _) = control_size(len, self.cfg.control_fraction)?;
                cm.predicted_batch(m_c, len - m_c)
            }
        })
    }

    fn fits_budget(&self, extra: f64) -> bool {
        match self.cfg.budget {
            None => true,
            Some(b) => self.state.ledger.cost_units + extra <= b * (1.0 + 1e-12),
        }
    }

    /// One full-backward batch that only feeds the predictor.
    fn warmup(&mut self) -> Result<()> {
        let Some(kind) = self.fitted_kind() else {
            self.state.warmup_done = true;
            return Ok(());
        };
        if self.state.predictor.is_none() && !self.cfg.warmup {
            return Err(Error::Config(
                "predicted training needs an initial predictor or warmup".into(),
            ));
        }
        if self.state.predictor.is_some() || !self.cfg.warmup {
            self.state.warmup_done = true;
            return Ok(());
        }
        let size = self.warmup_size();
        let mut rng = substream(self.cfg.seed, stream::WARMUP);
        let picks: Vec<usize> = index::sample(&mut rng, self.data.train.len(), size)
            .into_iter()
            .map(|k| self.data.train[k])
            .collect();
        let model = &self.state.model;
        let inp = self.inputs();
        let samples = inp.exec.try_map(picks.len(), |k| {
            let i = picks[k];
            let fp = model.forward(&inp.data.features[i])?;
            let (_, r) = crate::network::loss_and_residual(&fp.output, &inp.data.targets[i], inp.loss, inp.smoothing)?;
            let ge = model.backward(&fp.cache, &r)?;
            crate::predictor::FitSample::new(fp.llh, r, model.head_weight(), ge.trunk)
        })?;
        self.state.ledger.charge_true(size, &self.cfg.cost_model);
        samples.into_iter().for_each(|s| self.state.buffer.push(s));
        let fitted = Predictor::fit(kind, &self.state.buffer.samples(), self.cfg.refit.ridge_lambda)?;
        log::info!("warmup fit on {size} examples");
        self.state.predictor = Some(fitted);
        self.state.warmup_done = true;
        Ok(())
    }

    fn check_first_step_affordable(&self) -> Result<()> {
        let Some(budget) = self.cfg.budget else { return Ok(()) };
        if self.state.step > 0 {
            return Ok(());
        }
        let len = self.cfg.batch_size.min(self.data.train.len());
        let mut need = self.batch_cost(len)?;
        if !self.state.warmup_done && self.fitted_kind().is_some() && self.state.predictor.is_none() {
            need += self.cfg.cost_model.vanilla_batch(self.warmup_size());
        }
        if self.state.ledger.cost_units + need > budget * (1.0 + 1e-12) {
            return Err(Error::Budget(format!(
                "budget {budget} cannot pay for one step ({need} cost units)"
            )));
        }
        Ok(())
    }

    /// Trains until the epochs, budget or step cap run out. `on_step` sees
    /// every record as it is produced.
    pub fn run(&mut self, on_step: &mut dyn FnMut(&StepRecord) -> Result<()>) -> Result<RunOutcome> {
        self.check_first_step_affordable()?;
        if !self.state.warmup_done {
            self.warmup()?;
        }
        let mut records = Vec::new();
        let stop = loop {
            if self.cfg.max_steps.is_some_and(|cap| self.state.step >= cap) {
                break StopReason::MaxSteps;
            }
            if self.state.order.is_empty() || self.state.cursor >= self.state.order.len() {
                if self.state.epoch >= self.cfg.epochs {
                    break StopReason::EpochsDone;
                }
                let mut order = self.data.train.clone();
                order.shuffle(&mut self.state.shuffle_rng);
                self.state.order = order;
                self.state.cursor = 0;
            }
            let start = self.state.cursor;
            let end = (start + self.cfg.batch_size).min(self.state.order.len());
            if self.state.algorithm == Algorithm::Predicted && end - start < self.min_predicted_batch() {
                self.finish_epoch();
                continue;
            }
            if !self.fits_budget(self.batch_cost(end - start)?) {
                break StopReason::BudgetExhausted;
            }
            let batch = self.state.order[start..end].to_vec();
            let record = self.step(&batch)?;
            self.state.cursor = end;
            if end >= self.state.order.len() {
                self.finish_epoch();
            }
            on_step(&record)?;
            records.push(record);
        };
        Ok(RunOutcome { records, stop })
    }

    fn finish_epoch(&mut self) {
        self.state.epoch += 1;
        self.state.order.clear();
        self.state.cursor = 0;
    }

    fn step(&mut self, batch: &[usize]) -> Result<StepRecord> {
        let epoch = self.state.epoch;
        let inp = self.inputs();
        let cm = self.cfg.cost_model;
        let outcome: BatchOutcome = match self.state.algorithm {
            Algorithm::Vanilla => {
                let o = vanilla_batch(&self.state.model, &inp, batch)?;
                self.state.ledger.charge_true(batch.len(), &cm);
                o
            }
            Algorithm::Predicted => {
                let split = split_minibatch(batch.len(), self.cfg.control_fraction, &mut self.state.split_rng)?;
                let source = match (&self.cfg.predictor, &self.state.predictor) {
                    (PredictorMode::Perfect, _) => PredictionSource::Perfect,
                    (PredictorMode::Fitted(_), Some(p)) => PredictionSource::Fitted(p),
                    (PredictorMode::Fitted(_), None) => {
                        return Err(Error::Config("no fitted predictor available".into()));
                    }
                };
                let o = predicted_batch(&self.state.model, &inp, source, batch, &split)?;
                self.state.ledger.charge_true(split.control.len(), &cm);
                self.state.ledger.charge_cheap(split.prediction.len(), &cm);
                o
            }
        };

        let mut theta = self.state.model.params();
        let mut g = outcome.gradient;
        if self.cfg.weight_decay > 0.0 {
            g.iter_mut()
                .zip(&theta)
                .for_each(|(gi, t)| *gi += self.cfg.weight_decay * t);
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateStats(format!(
                "non-finite gradient at step {}",
                self.state.step + 1
            )));
        }
        let lr = self.cfg.lr_at(self.state.step);
        optimizer_step(
            self.cfg.optimizer,
            &mut theta,
            &g,
            &mut self.state.optimizer,
            lr,
            self.cfg.momentum,
        )?;
        self.state.model.set_params(&theta)?;
        self.state.step += 1;

        outcome.fit_samples.into_iter().for_each(|s| self.state.buffer.push(s));
        let mut refit = false;
        if let Some(kind) = self.fitted_kind() {
            if should_refit(&self.cfg.refit, self.state.step) {
                match Predictor::fit(kind, &self.state.buffer.samples(), self.cfg.refit.ridge_lambda) {
                    Ok(mut p) => {
                        p.info_mut().step = self.state.step;
                        self.state.predictor = Some(p);
                        refit = true;
                    }
                    Err(e) => log::warn!(
                        "refit after step {} failed, keeping previous predictor: {e}",
                        self.state.step
                    ),
                }
            }
        }

        if (self.state.step - 1).is_multiple_of(self.cfg.eval_every) {
            self.state.last_val = evaluate(
                &self.state.model,
                self.data,
                &self.data.validation,
                self.cfg.loss,
                self.cfg.label_smoothing,
                self.cfg.execution,
            )?;
        }
        let t = outcome.telemetry;
        Ok(StepRecord {
            step: self.state.step,
            epoch,
            cost_units: self.state.ledger.cost_units,
            loss: outcome.loss,
            val_metric: self.state.last_val,
            rho_hat: t.rho,
            kappa_hat: t.kappa,
            phi_hat: t.phi,
            rho_hat_full: t.rho_full,
            kappa_hat_full: t.kappa_full,
            phi_hat_full: t.phi_full,
            refit,
        })
    }
}
