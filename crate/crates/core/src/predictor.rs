//! Linear gradient predictors.
//!
//! Both variants reproduce the head gradient exactly from its closed form
//! `r ⊗ [a(x); 1]` and only learn the trunk part:
//!
//! * [`ScalarPredictor`] (single output): `∇_T l ≈ M · [a; 1] · r` with one
//!   fixed `P_T × (D+1)` matrix `M`.
//! * [`StructuredPredictor`] (any output count): `∇_T l ≈ U · c̃` where `U` is a
//!   fixed orthonormal `P_T × r` basis and `c̃_i = hᵀ S_i [a; 1]` with
//!   `h = W_aᵀ r`. The coefficients are linear in `h` and bilinear in the
//!   activations, so every `S_i` is a ridge regression on `h ⊗ [a; 1]`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, dot, outer, solve_ridge, Matrix};
use crate::network::{augment, head_gradient, GradientEstimate, GradientSource};

/// Residuals at or below this magnitude carry no information about `M`.
pub const RESIDUAL_EPS: f64 = 1e-8;

/// Scale of the default ridge penalty relative to the mean squared feature norm.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-6;

/// Fraction of squared singular mass kept by the default rank rule.
pub const DEFAULT_RANK_MASS: f64 = 0.99;

/// One training example's worth of predictor supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    pub llh: Vec<f64>,
    pub residual: Vec<f64>,
    /// `W_aᵀ · residual`
    pub h: Vec<f64>,
    /// True trunk gradient from `backward`.
    pub trunk_grad: Vec<f64>,
}

impl FitSample {
    pub fn new(llh: Vec<f64>, residual: Vec<f64>, head_weight: &Matrix, trunk_grad: Vec<f64>) -> Result<Self> {
        check_dim("head weight columns", llh.len(), head_weight.cols())?;
        let h = head_weight.tr_matvec(&residual)?;
        Ok(Self {
            llh,
            residual,
            h,
            trunk_grad,
        })
    }
}

/// How a fit came about; stored with the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub samples_used: usize,
    pub lambda: f64,
    /// Optimizer step after which the fit ran (0 for warmup fits).
    pub step: u64,
    /// Squared singular mass captured by the basis (structured only, else 1).
    pub captured_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPredictor {
    /// `P_T × (D+1)`
    pub m: Matrix,
    pub info: FitInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredPredictor {
    /// `P_T × r`, orthonormal columns.
    pub u: Matrix,
    /// `r` matrices, each `D × (D+1)`.
    pub s: Vec<Matrix>,
    pub info: FitInfo,
}

impl StructuredPredictor {
    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

/// Ridge penalty used when none is configured: a small multiple of the mean
/// squared row norm of the design matrix.
pub fn default_lambda(design: &Matrix) -> f64 {
    let n = design.rows().max(1) as f64;
    DEFAULT_RELATIVE_LAMBDA * design.as_slice().iter().map(|v| v * v).sum::<f64>() / n
}

/// Smallest rank whose leading singular values hold `mass` of the total
/// squared mass, capped at `cap` (and at least 1).
pub fn choose_rank(singulars: &[f64], mass: f64, cap: usize) -> usize {
    let total: f64 = singulars.iter().map(|s| s * s).sum();
    let cap = cap.clamp(1, singulars.len().max(1));
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, s) in singulars.iter().enumerate() {
        acc += s * s;
        if acc >= mass * total {
            return (i + 1).min(cap);
        }
    }
    cap
}

/// Fits `M` by ridge regression of trunk gradients on `[a; 1] · r`.
///
/// `lambda = None` selects [`default_lambda`]. Samples with `|r| ≤ 1e-8` are
/// dropped; at least `D + 1` must remain.
pub fn fit_scalar(samples: &[FitSample], lambda: Option<f64>) -> Result<ScalarPredictor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no fit samples".into()))?;
    let (d, p_t) = (first.llh.len(), first.trunk_grad.len());
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for s in samples {
        check_dim("scalar predictor residual", 1, s.residual.len())?;
        check_dim("fit sample activations", d, s.llh.len())?;
        check_dim("fit sample trunk gradient", p_t, s.trunk_grad.len())?;
        let r = s.residual[0];
        if r.abs() <= RESIDUAL_EPS {
            continue;
        }
        features.push(augment(&s.llh).into_iter().map(|z| z * r).collect::<Vec<_>>());
        targets.push(s.trunk_grad.as_slice());
    }
    if features.len() < d + 1 {
        return Err(Error::InsufficientData(format!(
            "scalar predictor needs {} samples with nonzero residual, got {}",
            d + 1,
            features.len()
        )));
    }
    let a = Matrix::from_rows(&features)?;
    let b = Matrix::from_rows(&targets)?;
    let lambda = lambda.unwrap_or_else(|| default_lambda(&a));
    let x = solve_ridge(&a, &b, lambda)?;
    Ok(ScalarPredictor {
        m: x.transpose(),
        info: FitInfo {
            samples_used: features.len(),
            lambda,
            step: 0,
            captured_mass: 1.0,
        },
    })
}

/// Scalar prediction for output `fx` and target `y`.
pub fn predict_scalar(p: &ScalarPredictor, llh: &[f64], fx: f64, y: f64) -> Result<GradientEstimate> {
    check_dim("predictor activations", p.m.cols(), llh.len() + 1)?;
    let r = fx - y;
    let scaled: Vec<f64> = augment(llh).into_iter().map(|z| z * r).collect();
    let trunk = p.m.matvec(&scaled)?;
    Ok(GradientEstimate {
        trunk,
        head: Matrix::from_vec(1, scaled.len(), scaled)?,
        source: GradientSource::Predicted,
    })
}

/// Rank selection for [`fit_structured_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    Fixed(usize),
    /// Smallest rank holding `mass` of the squared singular mass, at most `cap`.
    Mass {
        mass: f64,
        cap: usize,
    },
}

/// Fits `U` as the top-`r` left singular basis of the stacked trunk gradients
/// and each `S_i` by ridge regression of `c_i = (Uᵀ g)_i` on `h ⊗ [a; 1]`.
pub fn fit_structured(samples: &[FitSample], r: usize, lambda: Option<f64>) -> Result<StructuredPredictor> {
    fit_structured_with(samples, RankRule::Fixed(r), lambda)
}

pub fn fit_structured_with(samples: &[FitSample], rule: RankRule, lambda: Option<f64>) -> Result<StructuredPredictor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no fit samples".into()))?;
    let (d, p_t) = (first.llh.len(), first.trunk_grad.len());
    let n = samples.len();
    for s in samples {
        check_dim("fit sample activations", d, s.llh.len())?;
        check_dim("fit sample h", d, s.h.len())?;
        check_dim("fit sample trunk gradient", p_t, s.trunk_grad.len())?;
    }
    let min_samples = match rule {
        RankRule::Fixed(r) => r.max(d + 1),
        RankRule::Mass { .. } => d + 1,
    };
    if n < min_samples {
        return Err(Error::InsufficientData(format!(
            "structured predictor needs {min_samples} samples, got {n}"
        )));
    }
    if let RankRule::Fixed(r) = rule {
        if r == 0 || r > n.min(p_t) {
            return Err(Error::Dimension(format!(
                "predictor rank {r} must lie in 1..={}",
                n.min(p_t)
            )));
        }
    }

    let columns: Vec<Vec<f64>> = samples.iter().map(|s| s.trunk_grad.clone()).collect();
    let (basis, singulars) = linalg::left_singular_basis(&columns, p_t)?;
    let r = match rule {
        RankRule::Fixed(r) => r,
        RankRule::Mass { mass, cap } => choose_rank(&singulars, mass, cap.min(basis.cols())),
    };
    let u = Matrix::from_columns(&(0..r).map(|j| basis.column(j)).collect::<Vec<_>>())?;
    let total: f64 = singulars.iter().map(|s| s * s).sum();
    let kept: f64 = singulars[..r].iter().map(|s| s * s).sum();

    let mut features = Vec::with_capacity(n);
    let mut coeffs = Vec::with_capacity(n);
    for s in samples {
        features.push(outer(&s.h, &augment(&s.llh)).into_vec());
        coeffs.push(u.tr_matvec(&s.trunk_grad)?);
    }
    let a = Matrix::from_rows(&features)?;
    let b = Matrix::from_rows(&coeffs)?;
    let lambda = lambda.unwrap_or_else(|| default_lambda(&a));
    let x = solve_ridge(&a, &b, lambda)?;
    let s = (0..r)
        .map(|i| Matrix::from_vec(d, d + 1, x.column(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StructuredPredictor {
        u,
        s,
        info: FitInfo {
            samples_used: n,
            lambda,
            step: 0,
            captured_mass: if total > 0.0 { kept / total } else { 1.0 },
        },
    })
}

/// Structured prediction from activations, residual and the current `W_a`.
pub fn predict_structured(
    p: &StructuredPredictor,
    llh: &[f64],
    residual: &[f64],
    head_weight: &Matrix,
) -> Result<GradientEstimate> {
    check_dim("head weight columns", llh.len(), head_weight.cols())?;
    check_dim("head weight rows", residual.len(), head_weight.rows())?;
    if let Some(s0) = p.s.first() {
        check_dim("predictor activations", s0.rows(), llh.len())?;
    }
    let h = head_weight.tr_matvec(residual)?;
    let z = augment(llh);
    let coeffs: Vec<f64> =
        p.s.iter()
            .map(|si| dot(&h, &si.matvec(&z).expect("shape checked")))
            .collect();
    Ok(GradientEstimate {
        trunk: p.u.matvec(&coeffs)?,
        head: head_gradient(residual, llh),
        source: GradientSource::Predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorKind {
    Scalar,
    /// `rank = None` uses the default mass rule capped at `D`.
    Structured {
        rank: Option<usize>,
    },
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Scalar => f.write_str("scalar"),
            PredictorKind::Structured { rank: None } => f.write_str("structured"),
            PredictorKind::Structured { rank: Some(r) } => write!(f, "structured:{r}"),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "scalar" => Ok(PredictorKind::Scalar),
            None if s == "structured" => Ok(PredictorKind::Structured { rank: None }),
            Some(("structured", r)) => r
                .parse()
                .map(|r| PredictorKind::Structured { rank: Some(r) })
                .map_err(|_| Error::Config(format!("bad predictor rank `{r}`"))),
            _ => Err(Error::Config(format!("unknown predictor kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Scalar(ScalarPredictor),
    Structured(StructuredPredictor),
}

impl Predictor {
    pub fn fit(kind: PredictorKind, samples: &[FitSample], lambda: Option<f64>) -> Result<Self> {
        match kind {
            PredictorKind::Scalar => fit_scalar(samples, lambda).map(Predictor::Scalar),
            PredictorKind::Structured { rank } => {
                let d = samples.first().map_or(1, |s| s.llh.len());
                let rule = match rank {
                    Some(r) => RankRule::Fixed(r),
                    None => RankRule::Mass {
                        mass: DEFAULT_RANK_MASS,
                        cap: d,
                    },
                };
                fit_structured_with(samples, rule, lambda).map(Predictor::Structured)
            }
        }
    }

    pub fn predict(&self, llh: &[f64], residual: &[f64], head_weight: &Matrix) -> Result<GradientEstimate> {
        match self {
            Predictor::Scalar(p) => {
                check_dim("scalar predictor residual", 1, residual.len())?;
                predict_scalar(p, llh, residual[0], 0.0)
            }
            Predictor::Structured(p) => predict_structured(p, llh, residual, head_weight),
        }
    }

    pub fn info(&self) -> &FitInfo {
        match self {
            Predictor::Scalar(p) => &p.info,
            Predictor::Structured(p) => &p.info,
        }
    }

    pub fn info_mut(&mut self) -> &mut FitInfo {
        match self {
            Predictor::Scalar(p) => &mut p.info,
            Predictor::Structured(p) => &mut p.info,
        }
    }

    pub fn trunk_len(&self) -> usize {
        match self {
            Predictor::Scalar(p) => p.m.rows(),
            Predictor::Structured(p) => p.u.rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitPolicy {
    /// Refit after every `period` optimizer steps.
    pub period: u64,
    /// Most recent fit samples retained.
    pub buffer_capacity: usize,
    /// `None` selects [`default_lambda`].
    pub ridge_lambda: Option<f64>,
}

impl Default for RefitPolicy {
    fn default() -> Self {
        Self {
            period: 50,
            buffer_capacity: 256,
            ridge_lambda: None,
        }
    }
}

impl RefitPolicy {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("refit period must be >= 1".into()));
        }
        if self.buffer_capacity < feature_dim + 1 {
            return Err(Error::Config(format!(
                "fit buffer capacity {} is below the minimum of D + 1 = {}",
                self.buffer_capacity,
                feature_dim + 1
            )));
        }
        if let Some(l) = self.ridge_lambda {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("ridge lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

/// True when a refit is due after optimizer step `step`; never at step 0.
pub fn should_refit(policy: &RefitPolicy, step: u64) -> bool {
    step > 0 && step.is_multiple_of(policy.period)
}

/// Ring buffer of the most recent fit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FitBuffer {
    capacity: usize,
    samples: VecDeque<FitSample>,
}

impl FitBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, sample: FitSample) {
        if self.capacity == 0 {
            return;
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn samples(&self) -> Vec<FitSample> {
        self.samples.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FitSample> {
        self.samples.iter()
    }
}
