//! Per-batch gradient assembly.

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::estimator::{alignment_stats, combine_sums, variance_inflation, BatchSplit};
use crate::network::{loss_and_residual, LossKind, Model, Target};
use crate::parallel::Execution;
use crate::predictor::{FitSample, Predictor};

/// What stands in for `PredictGrad` on a predicted step.
#[derive(Debug, Clone, Copy)]
pub enum PredictionSource<'a> {
    Fitted(&'a Predictor),
    /// Exact gradients from a hidden `forward + backward`.
    Perfect,
}

/// Loss and flattened true gradient of one example.
pub fn oracle_gradient<M: Model>(
    model: &M,
    x: &[f64],
    target: &Target,
    loss: LossKind,
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    let fp = model.forward(x)?;
    let (l, r) = loss_and_residual(&fp.output, target, loss, smoothing)?;
    Ok((l, model.backward(&fp.cache, &r)?.flatten()))
}

/// Mean loss and mean true gradient over `indices`.
pub fn full_gradient<M: Model>(
    model: &M,
    data: &Dataset,
    indices: &[usize],
    loss: LossKind,
    smoothing: f64,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::Data("no examples to average over".into()));
    }
    let parts = exec.try_map(indices.len(), |k| {
        let i = indices[k];
        oracle_gradient(model, &data.features[i], &data.targets[i], loss, smoothing)
    })?;
    let mut g = vec![0.0; model.param_count()];
    let mut total = 0.0;
    for (l, gi) in parts {
        total += l;
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    let n = indices.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok((total / n, g))
}

/// Accuracy (classification) or mean loss (regression) over `indices`;
/// NaN when `indices` is empty.
pub fn evaluate<M: Model>(
    model: &M,
    data: &Dataset,
    indices: &[usize],
    loss: LossKind,
    smoothing: f64,
    exec: Execution,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let scores = exec.try_map(indices.len(), |k| -> Result<f64> {
        let i = indices[k];
        let (_, out) = model.cheap_forward(&data.features[i], false)?;
        match (&data.targets[i], data.classes) {
            (Target::Class(c), Some(_)) => {
                let best = out
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(usize::MAX, |(j, _)| j);
                Ok(f64::from(u8::from(best == *c)))
            }
            (t, _) => Ok(loss_and_residual(&out, t, loss, smoothing)?.0),
        }
    })?;
    Ok(scores.iter().sum::<f64>() / indices.len() as f64)
}

/// Everything one batch produces before the optimizer step.
pub(crate) struct BatchOutcome {
    pub gradient: Vec<f64>,
    pub loss: f64,
    pub telemetry: Telemetry,
    pub fit_samples: Vec<FitSample>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Telemetry {
    pub rho: f64,
    pub kappa: f64,
    pub phi: f64,
    pub rho_full: f64,
    pub kappa_full: f64,
    pub phi_full: f64,
}

impl Telemetry {
    pub const NONE: Telemetry = Telemetry {
        rho: f64::NAN,
        kappa: f64::NAN,
        phi: f64::NAN,
        rho_full: f64::NAN,
        kappa_full: f64::NAN,
        phi_full: f64::NAN,
    };
}

pub(crate) struct StepInputs<'a> {
    pub data: &'a Dataset,
    pub loss: LossKind,
    pub smoothing: f64,
    pub reduce_precision: bool,
    pub exec: Execution,
}

/// Mean of true gradients, summed in batch order.
pub(crate) fn vanilla_batch<M: Model>(model: &M, inp: &StepInputs<'_>, batch: &[usize]) -> Result<BatchOutcome> {
    let parts = inp.exec.try_map(batch.len(), |k| {
        let i = batch[k];
        oracle_gradient(
            model,
            &inp.data.features[i],
            &inp.data.targets[i],
            inp.loss,
            inp.smoothing,
        )
    })?;
    let mut acc = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let m = batch.len() as f64;
    acc.iter_mut().for_each(|v| *v /= m);
    Ok(BatchOutcome {
        gradient: acc,
        loss: loss / m,
        telemetry: Telemetry::NONE,
        fit_samples: Vec::new(),
    })
}

struct ExampleOut {
    loss: f64,
    /// True gradient; control examples only.
    g: Option<Vec<f64>>,
    h: Vec<f64>,
    fit: Option<FitSample>,
}

fn predicted_example<M: Model>(
    model: &M,
    inp: &StepInputs<'_>,
    source: PredictionSource<'_>,
    i: usize,
    control: bool,
) -> Result<ExampleOut> {
    let (x, target) = (&inp.data.features[i], &inp.data.targets[i]);
    if control {
        let fp = model.forward(x)?;
        let (loss, r) = loss_and_residual(&fp.output, target, inp.loss, inp.smoothing)?;
        let ge = model.backward(&fp.cache, &r)?;
        let g = ge.flatten();
        return Ok(match source {
            PredictionSource::Fitted(p) => {
                // The predictor reuses the llh from the full forward pass.
                let h = p.predict(&fp.llh, &r, model.head_weight())?.flatten();
                let fit = FitSample::new(fp.llh, r, model.head_weight(), ge.trunk)?;
                ExampleOut {
                    loss,
                    g: Some(g),
                    h,
                    fit: Some(fit),
                }
            }
            PredictionSource::Perfect => ExampleOut {
                loss,
                h: g.clone(),
                g: Some(g),
                fit: None,
            },
        });
    }
    let (llh, out) = model.cheap_forward(x, inp.reduce_precision)?;
    let (loss, r) = loss_and_residual(&out, target, inp.loss, inp.smoothing)?;
    let h = match source {
        PredictionSource::Fitted(p) => p.predict(&llh, &r, model.head_weight())?.flatten(),
        PredictionSource::Perfect => oracle_gradient(model, x, target, inp.loss, inp.smoothing)?.1,
    };
    Ok(ExampleOut {
        loss,
        g: None,
        h,
        fit: None,
    })
}

/// The debiased estimate in sum form: with `acc = Σ_c g + Σ_p h` and
/// `corr = Σ_c (g − h)`, both accumulated in batch order,
/// `G = (acc + (m_p/m_c)·corr)/m`. With exact predictions `corr` is zero and
/// `G` reproduces the vanilla batch mean bit for bit.
pub(crate) fn predicted_batch<M: Model>(
    model: &M,
    inp: &StepInputs<'_>,
    source: PredictionSource<'_>,
    batch: &[usize],
    split: &BatchSplit,
) -> Result<BatchOutcome> {
    check_dim("split size", batch.len(), split.m)?;
    if let PredictionSource::Fitted(p) = source {
        check_dim("predictor trunk length", model.trunk_len(), p.trunk_len())?;
    }
    let mut is_control = vec![false; batch.len()];
    split.control.iter().for_each(|&k| is_control[k] = true);
    let outs = inp.exec.try_map(batch.len(), |k| {
        predicted_example(model, inp, source, batch[k], is_control[k])
    })?;

    let p = model.param_count();
    let mut acc = vec![0.0; p];
    let mut corr = vec![0.0; p];
    let mut loss = 0.0;
    for o in &outs {
        loss += o.loss;
        match &o.g {
            Some(g) => {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                for ((c, gi), hi) in corr.iter_mut().zip(g).zip(&o.h) {
                    *c += gi - hi;
                }
            }
            None => acc.iter_mut().zip(&o.h).for_each(|(a, b)| *a += b),
        }
    }
    let (m_c, m_p) = (split.control.len(), split.prediction.len());
    let gradient = combine_sums(&acc, &corr, m_c, m_p)?;
    let telemetry = telemetry(&outs, model.trunk_len(), split.realized_fraction())?;
    Ok(BatchOutcome {
        gradient,
        loss: loss / batch.len() as f64,
        telemetry,
        fit_samples: outs.into_iter().filter_map(|o| o.fit).collect(),
    })
}

fn telemetry(outs: &[ExampleOut], trunk_len: usize, f: f64) -> Result<Telemetry> {
    let pairs: Vec<(&[f64], &[f64])> = outs
        .iter()
        .filter_map(|o| o.g.as_ref().map(|g| (g.as_slice(), o.h.as_slice())))
        .collect();
    if pairs.len() < 2 {
        return Ok(Telemetry::NONE);
    }
    let trunk: Vec<(&[f64], &[f64])> = pairs.iter().map(|(g, h)| (&g[..trunk_len], &h[..trunk_len])).collect();
    let t = alignment_stats(&trunk)?;
    let full = alignment_stats(&pairs)?;
    Ok(Telemetry {
        rho: t.rho,
        kappa: t.kappa,
        phi: variance_inflation(f, t.rho, t.kappa)?,
        rho_full: full.rho,
        kappa_full: full.kappa,
        phi_full: variance_inflation(f, full.rho, full.kappa)?,
    })
}

/// The debiased gradient for one batch and split at the model's current
/// parameters, without weight decay. Used to check unbiasedness in place.
#[allow(clippy::too_many_arguments)]
pub fn combined_gradient<M: Model>(
    model: &M,
    data: &Dataset,
    batch: &[usize],
    split: &BatchSplit,
    source: PredictionSource<'_>,
    loss: LossKind,
    smoothing: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let inp = StepInputs {
        data,
        loss,
        smoothing,
        reduce_precision: false,
        exec,
    };
    Ok(predicted_batch(model, &inp, source, batch, split)?.gradient)
}
