//! Cost model, convergence bounds and break-even thresholds.
//!
//! All closed forms are written in terms of the cheap-pass share
//! `A = c_cf / (c_f + c_b)` and `B = 1 − A`, so that the compute ratio is
//! `γ(f) = A + B·f`. With the default pass costs (backward 2, forward 1,
//! cheap forward 0.7) `A = 0.7/3`.
//!
//! Writing `a = 1 + κ² − 2ρκ` and `b = 2ρκ − κ²`, the inflation factor is
//! `φ = a/f + b` and the compute-normalised objective expands to
//!
//! ```text
//! Q(f) = φ·γ = A·a/f + B·b·f + (B·a + A·b)
//! ```

mod simulate;
mod sweep;

pub use simulate::{simulate_estimator, SimulationReport, SimulationSpec};
pub use sweep::{write_sweep_csv, Sweep, SweepRow, SWEEP_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::variance_inflation;

/// Default lower clamp for the optimal control fraction.
pub const DEFAULT_F_MIN: f64 = 0.01;

/// Per-example pass costs in abstract units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub backward: f64,
    pub forward: f64,
    pub cheap_forward: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            backward: 2.0,
            forward: 1.0,
            cheap_forward: 0.7,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("backward", self.backward),
            ("forward", self.forward),
            ("cheap_forward", self.cheap_forward),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("cost {name} must be positive, got {v}")));
            }
        }
        if self.cheap_forward > self.forward + self.backward {
            return Err(Error::Config(format!(
                "cheap_forward {} exceeds forward + backward {}",
                self.cheap_forward,
                self.forward + self.backward
            )));
        }
        Ok(())
    }

    /// Cost of one true gradient, `c_f + c_b`.
    pub fn full(&self) -> f64 {
        self.forward + self.backward
    }

    /// `A = c_cf / (c_f + c_b)`.
    pub fn cheap_share(&self) -> f64 {
        self.cheap_forward / self.full()
    }

    /// Cost of a vanilla mini-batch of `m` examples.
    pub fn vanilla_batch(&self, m: usize) -> f64 {
        m as f64 * self.full()
    }

    /// Cost of a predicted-gradient mini-batch with `m_c` control and `m_p`
    /// prediction examples.
    pub fn predicted_batch(&self, m_c: usize, m_p: usize) -> f64 {
        m_c as f64 * self.full() + m_p as f64 * self.cheap_forward
    }
}

fn check_open_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("control fraction must lie in (0, 1), got {f}")))
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("control fraction must lie in (0, 1], got {f}")))
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("kappa must be positive, got {kappa}")))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::Domain(format!("rho must lie in [-1, 1], got {rho}")))
    }
}

/// Per-iteration cost relative to vanilla.
pub fn gamma(cm: &CostModel, f: f64) -> Result<f64> {
    cm.validate()?;
    check_fraction(f)?;
    Ok((cm.cheap_forward + (cm.full() - cm.cheap_forward) * f) / cm.full())
}

/// Smallest alignment at which the predicted scheme matches vanilla SGD at
/// equal compute.
pub fn rho_star(cm: &CostModel, f: f64, kappa: f64) -> Result<f64> {
    cm.validate()?;
    check_open_fraction(f)?;
    check_kappa(kappa)?;
    let c_cf = cm.cheap_forward;
    Ok(kappa / 2.0 + c_cf / (2.0 * kappa * (c_cf + (cm.full() - c_cf) * f)))
}

/// `φ(f, ρ, κ)·γ(f) ≤ 1`.
pub fn break_even_satisfied(cm: &CostModel, f: f64, rho: f64, kappa: f64) -> Result<bool> {
    check_open_fraction(f)?;
    Ok(q_objective(cm, f, rho, kappa)? <= 1.0)
}

/// Alignment above which the optimal control fraction drops below 1.
pub fn rho_switch(cm: &CostModel, kappa: f64) -> Result<f64> {
    cm.validate()?;
    check_kappa(kappa)?;
    let a = cm.cheap_share();
    Ok(kappa / 2.0 + a / (2.0 * kappa))
}

/// Minimiser of `Q` over `[f_min, 1]`.
///
/// `1` when `ρ ≤ ρ_switch`, otherwise `sqrt(A·a / (B·b))` clamped to
/// `[f_min, 1]`. When `a = 0` (prediction is perfect) `Q` decreases all the way
/// to `f = 0` and `f_min` is returned.
pub fn f_star(cm: &CostModel, rho: f64, kappa: f64, f_min: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(f_min > 0.0 && f_min < 1.0) {
        return Err(Error::Domain(format!("f_min must lie in (0, 1), got {f_min}")));
    }
    if rho <= rho_switch(cm, kappa)? {
        return Ok(1.0);
    }
    let (a, b) = split_terms(rho, kappa);
    if a <= 0.0 {
        return Ok(f_min);
    }
    let big_a = cm.cheap_share();
    let big_b = 1.0 - big_a;
    Ok((big_a * a / (big_b * b)).sqrt().clamp(f_min, 1.0))
}

/// `(a, b) = (1 + κ² − 2ρκ, 2ρκ − κ²)`, so that `φ = a/f + b`.
pub fn split_terms(rho: f64, kappa: f64) -> (f64, f64) {
    (
        1.0 + kappa * kappa - 2.0 * rho * kappa,
        2.0 * rho * kappa - kappa * kappa,
    )
}

/// `Q(f) = φ(f, ρ, κ)·γ(f)`.
pub fn q_objective(cm: &CostModel, f: f64, rho: f64, kappa: f64) -> Result<f64> {
    Ok(variance_inflation(f, rho, kappa)? * gamma(cm, f)?)
}

/// `Q(f)` in the expanded form `A·a/f + B·b·f + (B·a + A·b)`.
pub fn q_decomposed(cm: &CostModel, f: f64, rho: f64, kappa: f64) -> Result<f64> {
    cm.validate()?;
    check_fraction(f)?;
    let (a, b) = split_terms(rho, kappa);
    let big_a = cm.cheap_share();
    let big_b = 1.0 - big_a;
    Ok(big_a * a / f + big_b * b * f + (big_b * a + big_a * b))
}

/// Inputs shared by the two convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `F(θ₀) − F*`
    pub initial_gap: f64,
    /// `α`
    pub strong_convexity: f64,
    /// `L`
    pub smoothness: f64,
    /// `η`
    pub stepsize: f64,
    /// Uniform bound on `E‖G − ∇F‖²`.
    pub variance: f64,
    pub horizon: u64,
}

impl BoundInputs {
    fn check_common(&self) -> Result<()> {
        if !(self.initial_gap >= 0.0) || !(self.variance >= 0.0) {
            return Err(Error::Domain("initial gap and variance must be nonnegative".into()));
        }
        if !(self.smoothness > 0.0) || !(self.stepsize > 0.0) {
            return Err(Error::Domain("smoothness and stepsize must be positive".into()));
        }
        let limit = 1.0 / self.smoothness;
        if self.stepsize > limit {
            return Err(Error::Stepsize {
                eta: self.stepsize,
                limit,
            });
        }
        Ok(())
    }
}

/// Expected suboptimality after `T` steps on an `α`-strongly convex objective:
/// `(1−αη)^T (gap − LηV/(2α)) + LηV/(2α)`.
pub fn sc_bound(b: &BoundInputs) -> Result<f64> {
    b.check_common()?;
    let alpha = b.strong_convexity;
    if !(alpha > 0.0) || alpha > b.smoothness {
        return Err(Error::Domain(format!(
            "strong convexity must lie in (0, L], got {alpha}"
        )));
    }
    let floor = b.smoothness * b.stepsize * b.variance / (2.0 * alpha);
    let contraction = (1.0 - alpha * b.stepsize).powf(b.horizon as f64);
    Ok(contraction * (b.initial_gap - floor) + floor)
}

/// Bound on the average squared gradient norm over `T` steps:
/// `2·gap/(ηT) + LηV`.
pub fn nc_bound(b: &BoundInputs) -> Result<f64> {
    b.check_common()?;
    if b.horizon == 0 {
        return Err(Error::Domain("horizon must be >= 1".into()));
    }
    Ok(2.0 * b.initial_gap / (b.stepsize * b.horizon as f64) + b.smoothness * b.stepsize * b.variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm() -> CostModel {
        CostModel::default()
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(&cm(), 1.0).unwrap(), 1.0);
        assert!((gamma(&cm(), 0.2).unwrap() - (0.7 + 2.3 * 0.2) / 3.0).abs() < 1e-15);
        assert!((gamma(&cm(), 1e-12).unwrap() - 0.7 / 3.0).abs() < 1e-11);
        for i in 1..=100 {
            assert!(gamma(&cm(), i as f64 / 100.0).unwrap() > 0.7 / 3.0);
        }
        assert!(matches!(gamma(&cm(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(gamma(&cm(), 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn rho_star_reference_values() {
        let cases = [(0.1, 0.876), (0.2, 0.802), (0.5, 0.689)];
        for (f, want) in cases {
            let got = rho_star(&cm(), f, 1.0).unwrap();
            assert!((got - want).abs() < 1e-3, "f={f}: {got}");
        }
        assert!(matches!(rho_star(&cm(), 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(rho_star(&cm(), 0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rho_star_oracle() {
        // Solve φγ = 1 for ρ directly: φ is affine in ρ.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let f = rng.random_range(0.01..0.99);
            let kappa = rng.random_range(0.1..3.0);
            let g = gamma(&cm(), f).unwrap();
            let phi0 = variance_inflation(f, 0.0, kappa).unwrap();
            let slope = variance_inflation(f, 1.0, kappa).unwrap() - phi0;
            let root = (1.0 / g - phi0) / slope;
            let got = rho_star(&cm(), f, kappa).unwrap();
            assert!((got - root).abs() < 1e-9 * (1.0 + root.abs()), "{got} vs {root}");
        }
    }

    #[test]
    fn rho_star_monotonicity() {
        for i in 1..99 {
            let f = i as f64 / 100.0;
            let next = (i + 1) as f64 / 100.0;
            assert!(rho_star(&cm(), next, 1.0).unwrap() < rho_star(&cm(), f, 1.0).unwrap());
            assert!(rho_star(&cm(), f, 1.2).unwrap() > rho_star(&cm(), f, 1.0).unwrap());
        }
    }

    #[test]
    fn break_even_examples_and_agreement() {
        for f in [0.01, 0.3, 0.99] {
            assert!(break_even_satisfied(&cm(), f, 1.0, 1.0).unwrap());
        }
        assert!(!break_even_satisfied(&cm(), 0.2, 0.79, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let f = rng.random_range(0.01..0.99);
            let rho = rng.random_range(-1.0..1.0);
            let kappa = rng.random_range(0.05..3.0);
            assert_eq!(
                break_even_satisfied(&cm(), f, rho, kappa).unwrap(),
                rho >= rho_star(&cm(), f, kappa).unwrap()
            );
        }
    }

    #[test]
    fn rho_switch_values() {
        assert!((rho_switch(&cm(), 1.0).unwrap() - (0.5 + 0.7 / 6.0)).abs() < 1e-12);
        assert!((rho_switch(&cm(), 0.5).unwrap() - (0.25 + 0.7 / 3.0)).abs() < 1e-12);
        for i in 1..200 {
            let kappa = i as f64 / 50.0;
            assert!(rho_switch(&cm(), kappa).unwrap() > kappa / 2.0);
        }
    }

    #[test]
    fn f_star_values() {
        let got = f_star(&cm(), 0.8, 1.0, DEFAULT_F_MIN).unwrap();
        assert!((got - (0.28f64 / 1.38).sqrt()).abs() < 1e-12);
        assert!((got - 0.45).abs() < 1e-2);
        assert_eq!(f_star(&cm(), 0.6, 1.0, DEFAULT_F_MIN).unwrap(), 1.0);
        assert_eq!(f_star(&cm(), 1.0, 1.0, DEFAULT_F_MIN).unwrap(), DEFAULT_F_MIN);
        assert!(matches!(f_star(&cm(), 0.8, 1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn f_star_is_grid_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let grid: Vec<f64> = (10..=1000).map(|i| i as f64 / 1000.0).collect();
        for _ in 0..100 {
            let rho = rng.random_range(0.0..0.98);
            let kappa = rng.random_range(0.3..2.0);
            let fs = f_star(&cm(), rho, kappa, DEFAULT_F_MIN).unwrap();
            let best = grid
                .iter()
                .copied()
                .min_by(|x, y| {
                    let qx = q_objective(&cm(), *x, rho, kappa).unwrap();
                    let qy = q_objective(&cm(), *y, rho, kappa).unwrap();
                    qx.total_cmp(&qy)
                })
                .unwrap();
            assert!(
                (fs - best).abs() <= 1e-3 + 1e-12,
                "rho={rho} kappa={kappa}: {fs} vs {best}"
            );
        }
    }

    #[test]
    fn q_forms_and_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let f = rng.random_range(0.01..1.0);
            let rho = rng.random_range(-1.0..1.0);
            let kappa = rng.random_range(0.05..3.0);
            let q = q_objective(&cm(), f, rho, kappa).unwrap();
            let d = q_decomposed(&cm(), f, rho, kappa).unwrap();
            assert!((q - d).abs() <= 1e-12 * q.abs().max(1.0));
        }
        for f in [0.1, 0.5, 0.9] {
            assert!((q_objective(&cm(), f, 1.0, 1.0).unwrap() - gamma(&cm(), f).unwrap()).abs() < 1e-12);
        }
        let fs = f_star(&cm(), 0.8, 1.0, DEFAULT_F_MIN).unwrap();
        let q0 = q_objective(&cm(), fs, 0.8, 1.0).unwrap();
        for k in 1..40 {
            let delta = k as f64 / 100.0;
            if fs - delta > 0.0 {
                assert!(q_objective(&cm(), fs - delta, 0.8, 1.0).unwrap() >= q0);
            }
            if fs + delta <= 1.0 {
                assert!(q_objective(&cm(), fs + delta, 0.8, 1.0).unwrap() >= q0);
            }
        }
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
        let argmin = grid
            .iter()
            .copied()
            .min_by(|x, y| {
                q_objective(&cm(), *x, 0.8, 1.0)
                    .unwrap()
                    .total_cmp(&q_objective(&cm(), *y, 0.8, 1.0).unwrap())
            })
            .unwrap();
        assert!((argmin - 0.45).abs() < 1e-9);
    }

    #[test]
    fn generalized_cost_model() {
        let hw = CostModel {
            backward: 3.0,
            forward: 1.0,
            cheap_forward: 0.4,
        };
        assert!((gamma(&hw, 0.25).unwrap() - (0.4 + 3.6 * 0.25) / 4.0).abs() < 1e-15);
        let rs = rho_switch(&hw, 1.0).unwrap();
        let f_just_above = f_star(&hw, rs + 1e-6, 1.0, DEFAULT_F_MIN).unwrap();
        assert!(f_just_above > 0.99);
        assert!(CostModel {
            cheap_forward: 5.0,
            ..hw
        }
        .validate()
        .is_err());
        assert!(CostModel { forward: 0.0, ..hw }.validate().is_err());
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            initial_gap: 1.0,
            strong_convexity: 1.0,
            smoothness: 1.0,
            stepsize: 0.5,
            variance: 0.1,
            horizon: 10,
        }
    }

    #[test]
    fn sc_bound_values() {
        let got = sc_bound(&inputs()).unwrap();
        assert!((got - (0.5f64.powi(10) * (1.0 - 0.025) + 0.025)).abs() < 1e-15);
        let full = BoundInputs {
            stepsize: 1.0,
            variance: 0.0,
            horizon: 3,
            ..inputs()
        };
        assert_eq!(sc_bound(&full).unwrap(), 0.0);
        let none = BoundInputs { horizon: 0, ..inputs() };
        assert!((sc_bound(&none).unwrap() - 1.0).abs() < 1e-15);
        let big = BoundInputs {
            stepsize: 1.5,
            ..inputs()
        };
        assert!(matches!(sc_bound(&big), Err(Error::Stepsize { .. })));
    }

    #[test]
    fn nc_bound_values() {
        let one = BoundInputs {
            stepsize: 1.0,
            variance: 0.0,
            horizon: 1,
            ..inputs()
        };
        assert_eq!(nc_bound(&one).unwrap(), 2.0);
        let long = BoundInputs {
            variance: 0.0,
            horizon: 1_000_000_000,
            ..inputs()
        };
        assert!(nc_bound(&long).unwrap() < 1e-8);
        let base = nc_bound(&inputs()).unwrap();
        let doubled = nc_bound(&BoundInputs {
            variance: 0.2,
            ..inputs()
        })
        .unwrap();
        assert!((doubled - base - 1.0 * 0.5 * 0.1).abs() < 1e-15);
        let big = BoundInputs {
            stepsize: 2.0,
            ..inputs()
        };
        assert!(matches!(nc_bound(&big), Err(Error::Stepsize { .. })));
    }
}
