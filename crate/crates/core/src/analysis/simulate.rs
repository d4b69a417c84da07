//! Monte Carlo check of the combined estimator's mean and variance.
//!
//! Per-example pairs are Gaussian: `g = μ + u` with `u ~ N(0, σ_g²/d·I)` and
//! `h = μ_h + v` with `v = (τ/σ_g²)·u + w`, `w ~ N(0, (σ_h² − τ²/σ_g²)/d·I)`,
//! which gives exactly the requested `σ_g²`, `σ_h²` and `τ`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{combine_control_variate, control_size, split_minibatch, v2_from_moments};
use crate::parallel::Execution;
use crate::rng::{chunk_stream, stream, Rng};

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub tau: f64,
    pub dim: usize,
    pub f: f64,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    /// Scale of the true mean `μ_j = mean_scale·(1 + j/d)`; zero gives `μ = 0`.
    pub mean_scale: f64,
}

impl SimulationSpec {
    /// Moments from `(σ_g, ρ, κ)`.
    pub fn from_alignment(sigma_g: f64, rho: f64, kappa: f64) -> Self {
        let sigma_h = kappa * sigma_g;
        Self {
            sigma_g,
            sigma_h,
            tau: rho * sigma_g * sigma_h,
            dim: 8,
            f: 0.5,
            m: 20,
            trials: 10_000,
            seed: 0,
            mean_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.sigma_g, self.sigma_h, self.tau, self.mean_scale]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.sigma_g > 0.0) || self.sigma_h < 0.0 {
            return Err(Error::Moment(format!(
                "need finite sigma_g > 0 and sigma_h >= 0, got ({}, {})",
                self.sigma_g, self.sigma_h
            )));
        }
        let bound = self.sigma_g * self.sigma_h;
        if self.tau.abs() > bound * (1.0 + 1e-12) {
            return Err(Error::Moment(format!(
                "|tau| = {} exceeds sigma_g*sigma_h = {bound}",
                self.tau.abs()
            )));
        }
        if self.dim == 0 || self.m < 2 || self.trials == 0 {
            return Err(Error::Domain("dim, trials must be >= 1 and m >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// `‖mean(G) − μ‖` over all trials.
    pub mean_err: f64,
    /// `sqrt(emp_var / trials)`, the standard error scale for `mean_err`.
    pub std_err: f64,
    /// Mean of `‖G − μ‖²`.
    pub emp_var: f64,
    /// Closed-form variance at the realised control fraction.
    pub predicted_var: f64,
    pub realized_f: f64,
    pub trials: usize,
}

impl SimulationReport {
    pub fn variance_ratio(&self) -> f64 {
        self.emp_var / self.predicted_var
    }
}

struct Partial {
    err_sum: Vec<f64>,
    sq_sum: f64,
}

/// Runs `trials` independent mini-batches and compares against the
/// closed-form variance. Trials are drawn in fixed chunks with independent
/// streams and reduced in chunk order, so the result does not depend on
/// `exec`.
pub fn simulate_estimator(spec: &SimulationSpec, exec: Execution) -> Result<SimulationReport> {
    spec.validate()?;
    let (m_c, _) = control_size(spec.m, spec.f)?;
    let realized_f = m_c as f64 / spec.m as f64;
    let predicted_var = v2_from_moments(spec.sigma_g, spec.sigma_h, spec.tau, realized_f, spec.m)?;

    let d = spec.dim;
    let mu: Vec<f64> = (0..d).map(|j| spec.mean_scale * (1.0 + j as f64 / d as f64)).collect();
    // An offset predicted mean: the estimator must not depend on it.
    let mu_h: Vec<f64> = mu.iter().map(|v| 0.5 * v - 0.25).collect();
    let sd_u = spec.sigma_g / (d as f64).sqrt();
    let beta = spec.tau / (spec.sigma_g * spec.sigma_g);
    let w_var = (spec.sigma_h * spec.sigma_h - spec.tau * spec.tau / (spec.sigma_g * spec.sigma_g)).max(0.0);
    let sd_w = (w_var / d as f64).sqrt();

    let chunks = spec.trials.div_ceil(CHUNK);
    let partials = exec.try_map(chunks, |c| -> Result<Partial> {
        let mut rng = chunk_stream(spec.seed, stream::SIMULATION, c as u64);
        let n = CHUNK.min(spec.trials - c * CHUNK);
        let mut err_sum = vec![0.0; d];
        let mut sq_sum = 0.0;
        let mut g = vec![vec![0.0; d]; spec.m];
        let mut h = vec![vec![0.0; d]; spec.m];
        for _ in 0..n {
            draw_batch(&mut rng, &mu, &mu_h, sd_u, beta, sd_w, &mut g, &mut h);
            let split = split_minibatch(spec.m, spec.f, &mut rng)?;
            let g_c = mean_of(&g, &split.control, d);
            let h_c = mean_of(&h, &split.control, d);
            let h_p = if split.prediction.is_empty() {
                h_c.clone()
            } else {
                mean_of(&h, &split.prediction, d)
            };
            let est = combine_control_variate(&g_c, &h_c, &h_p, realized_f)?;
            for ((s, e), m) in err_sum.iter_mut().zip(&est).zip(&mu) {
                let diff = e - m;
                *s += diff;
                sq_sum += diff * diff;
            }
        }
        Ok(Partial { err_sum, sq_sum })
    })?;

    let mut err_sum = vec![0.0; d];
    let mut sq_sum = 0.0;
    for p in partials {
        err_sum.iter_mut().zip(&p.err_sum).for_each(|(a, b)| *a += b);
        sq_sum += p.sq_sum;
    }
    let t = spec.trials as f64;
    let mean_err = err_sum.iter().map(|v| (v / t) * (v / t)).sum::<f64>().sqrt();
    let emp_var = sq_sum / t;
    Ok(SimulationReport {
        mean_err,
        std_err: (emp_var / t).sqrt(),
        emp_var,
        predicted_var,
        realized_f,
        trials: spec.trials,
    })
}

#[allow(clippy::too_many_arguments)]
fn draw_batch(
    rng: &mut Rng,
    mu: &[f64],
    mu_h: &[f64],
    sd_u: f64,
    beta: f64,
    sd_w: f64,
    g: &mut [Vec<f64>],
    h: &mut [Vec<f64>],
) {
    for (gi, hi) in g.iter_mut().zip(h.iter_mut()) {
        for j in 0..mu.len() {
            let z: f64 = StandardNormal.sample(rng);
            let u = sd_u * z;
            let z: f64 = StandardNormal.sample(rng);
            let w = sd_w * z;
            gi[j] = mu[j] + u;
            hi[j] = mu_h[j] + beta * u + w;
        }
    }
}

fn mean_of(rows: &[Vec<f64>], idx: &[usize], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for &i in idx {
        out.iter_mut().zip(&rows[i]).for_each(|(o, v)| *o += v);
    }
    let inv = 1.0 / idx.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}
