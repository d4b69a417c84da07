//! Grid evaluation of `φ`, `γ`, `Q` and the break-even verdict.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{gamma, q_objective, CostModel};
use crate::error::{Error, Result};
use crate::estimator::variance_inflation;

pub const SWEEP_HEADER: [&str; 7] = ["f", "rho", "kappa", "phi", "gamma", "Q", "break_even"];

/// Axes of a sweep; each must be strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub f: Vec<f64>,
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub f: f64,
    pub rho: f64,
    pub kappa: f64,
    pub phi: f64,
    pub gamma: f64,
    pub q: f64,
    /// `Q ≤ 1`; at `f = 1` this holds trivially.
    pub break_even: bool,
}

impl Sweep {
    /// `n` evenly spaced points on `[lo, hi]` (a single point when `n = 1`).
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, axis) in [("f", &self.f), ("rho", &self.rho), ("kappa", &self.kappa)] {
            if axis.is_empty() {
                return Err(Error::Config(format!("sweep axis {name} is empty")));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!("sweep axis {name} is not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Rows in `f`-major, then `rho`, then `kappa` order.
    pub fn evaluate(&self, cm: &CostModel) -> Result<Vec<SweepRow>> {
        self.validate()?;
        let mut rows = Vec::with_capacity(self.f.len() * self.rho.len() * self.kappa.len());
        for &f in &self.f {
            let g = gamma(cm, f)?;
            for &rho in &self.rho {
                for &kappa in &self.kappa {
                    let phi = variance_inflation(f, rho, kappa)?;
                    let q = q_objective(cm, f, rho, kappa)?;
                    rows.push(SweepRow {
                        f,
                        rho,
                        kappa,
                        phi,
                        gamma: g,
                        q,
                        break_even: q <= 1.0,
                    });
                }
            }
        }
        Ok(rows)
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.f.to_string(),
            r.rho.to_string(),
            r.kappa.to_string(),
            r.phi.to_string(),
            r.gamma.to_string(),
            r.q.to_string(),
            r.break_even.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
