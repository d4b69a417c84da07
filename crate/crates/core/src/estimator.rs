//! Control-variate combination of true and predicted gradients, and the
//! moment statistics that determine its variance.
//!
//! With control micro-batch means `ḡ_c`, `h̄_c` and prediction micro-batch mean
//! `h̄_p`, the combined gradient is
//!
//! ```text
//! G = f·ḡ_c + (1−f)·(h̄_p − (h̄_c − ḡ_c))  =  ḡ_c + (1−f)·(h̄_p − h̄_c)
//! ```
//!
//! which is unbiased whenever the two micro-batches are independent draws.

use rand::seq::SliceRandom;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng::Rng;

/// Partition of one mini-batch into control and prediction positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSplit {
    /// Ascending positions within the mini-batch.
    pub control: Vec<usize>,
    /// Ascending positions within the mini-batch.
    pub prediction: Vec<usize>,
    /// Requested control fraction.
    pub f: f64,
    pub m: usize,
    /// `f·m` was not a whole number and was rounded.
    pub rounded: bool,
}

impl BatchSplit {
    /// `m_c / m`, the fraction actually realized after rounding.
    pub fn realized_fraction(&self) -> f64 {
        self.control.len() as f64 / self.m as f64
    }
}

/// `round(f·m)` with a warning when `f·m` is fractional.
pub fn control_size(m: usize, f: f64) -> Result<(usize, bool)> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain(format!("control fraction must lie in (0, 1], got {f}")));
    }
    let exact = f * m as f64;
    let m_c = exact.round() as usize;
    if m_c == 0 {
        return Err(Error::ControlBatchEmpty { m, f });
    }
    // Tolerate representation error such as 0.1 * 30 = 3.0000000000000004.
    let rounded = (exact - m_c as f64).abs() > 1e-9;
    if rounded {
        log::warn!("f·m = {f}·{m} = {exact} is not whole; control micro-batch rounded to {m_c}");
    }
    Ok((m_c.min(m), rounded))
}

/// Uniformly random disjoint split of positions `0..m`.
pub fn split_minibatch(m: usize, f: f64, rng: &mut Rng) -> Result<BatchSplit> {
    let (m_c, rounded) = control_size(m, f)?;
    let mut positions: Vec<usize> = (0..m).collect();
    positions.shuffle(rng);
    let mut control = positions[..m_c].to_vec();
    let mut prediction = positions[m_c..].to_vec();
    control.sort_unstable();
    prediction.sort_unstable();
    Ok(BatchSplit {
        control,
        prediction,
        f,
        m,
        rounded,
    })
}

/// `f·g_c_true + (1−f)·(g_pred − (g_c_pred − g_c_true))`; `f = 1` returns `g_c_true`.
pub fn combine_debiased(g_c_true: &[f64], g_c_pred: &[f64], g_pred: &[f64], f: f64) -> Result<Vec<f64>> {
    check_dim("control predicted gradient", g_c_true.len(), g_c_pred.len())?;
    check_dim("prediction gradient", g_c_true.len(), g_pred.len())?;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain(format!("control fraction must lie in (0, 1], got {f}")));
    }
    if f == 1.0 {
        return Ok(g_c_true.to_vec());
    }
    Ok(g_c_true
        .iter()
        .zip(g_c_pred)
        .zip(g_pred)
        .map(|((&t, &cp), &p)| f * t + (1.0 - f) * (p - (cp - t)))
        .collect())
}

/// The same estimator written as `ḡ_c + (1−f)(h̄_p − h̄_c)`.
pub fn combine_control_variate(g_bar_c: &[f64], h_bar_c: &[f64], h_bar_p: &[f64], f: f64) -> Result<Vec<f64>> {
    check_dim("control predicted mean", g_bar_c.len(), h_bar_c.len())?;
    check_dim("prediction mean", g_bar_c.len(), h_bar_p.len())?;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain(format!("control fraction must lie in (0, 1], got {f}")));
    }
    Ok(g_bar_c
        .iter()
        .zip(h_bar_c)
        .zip(h_bar_p)
        .map(|((&g, &hc), &hp)| g + (1.0 - f) * (hp - hc))
        .collect())
}

/// The estimator evaluated from sums, with `f = m_c / m`:
///
/// ```text
/// G = (Σ_c g + Σ_p h + (m_p/m_c)·Σ_c (g − h)) / m
/// ```
///
/// `batch_sum` is `Σ_c g + Σ_p h` accumulated in mini-batch order and
/// `correction` is `Σ_c (g − h)`. When predictions on the control side equal
/// the true gradients the correction is exactly zero and `G` is bit-for-bit the
/// plain mini-batch mean computed in the same order.
pub fn combine_sums(batch_sum: &[f64], correction: &[f64], m_c: usize, m_p: usize) -> Result<Vec<f64>> {
    check_dim("control correction", batch_sum.len(), correction.len())?;
    if m_c == 0 {
        return Err(Error::ControlBatchEmpty { m: m_c + m_p, f: 0.0 });
    }
    let m = (m_c + m_p) as f64;
    let mut g = batch_sum.to_vec();
    if m_p > 0 {
        axpy(m_p as f64 / m_c as f64, correction, &mut g);
    }
    g.iter_mut().for_each(|v| *v /= m);
    Ok(g)
}

/// Sample moments of paired true (`g`) and predicted (`h`) per-example gradients.
///
/// Population-style: second moments divide by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub tau: f64,
    /// `τ / (σ_g σ_h)`, or 0 when degenerate.
    pub rho: f64,
    /// `σ_h / σ_g`, or 0 when degenerate.
    pub kappa: f64,
    pub n: usize,
    pub mu: Vec<f64>,
    pub mu_h: Vec<f64>,
    /// `σ_g = 0` or `σ_h = 0`; `rho` (and `kappa` when `σ_g = 0`) are reported as 0.
    pub degenerate: bool,
}

pub fn alignment_stats<G: AsRef<[f64]>, H: AsRef<[f64]>>(pairs: &[(G, H)]) -> Result<AlignmentStats> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("alignment needs >= 2 pairs, got {n}")));
    }
    let dim = pairs[0].0.as_ref().len();
    let mut mu = vec![0.0; dim];
    let mut mu_h = vec![0.0; dim];
    for (g, h) in pairs {
        let (g, h) = (g.as_ref(), h.as_ref());
        check_dim("true gradient", dim, g.len())?;
        check_dim("predicted gradient", dim, h.len())?;
        axpy(1.0, g, &mut mu);
        axpy(1.0, h, &mut mu_h);
    }
    let inv_n = 1.0 / n as f64;
    mu.iter_mut().for_each(|v| *v *= inv_n);
    mu_h.iter_mut().for_each(|v| *v *= inv_n);

    let (mut sgg, mut shh, mut sgh) = (0.0, 0.0, 0.0);
    let mut u = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    for (g, h) in pairs {
        for (((ui, vi), (&gi, &hi)), (&mi, &mhi)) in u
            .iter_mut()
            .zip(v.iter_mut())
            .zip(g.as_ref().iter().zip(h.as_ref()))
            .zip(mu.iter().zip(&mu_h))
        {
            *ui = gi - mi;
            *vi = hi - mhi;
        }
        sgg += dot(&u, &u);
        shh += dot(&v, &v);
        sgh += dot(&u, &v);
    }
    let sigma_g = (sgg * inv_n).sqrt();
    let sigma_h = (shh * inv_n).sqrt();
    let tau = sgh * inv_n;
    let degenerate = sigma_g == 0.0 || sigma_h == 0.0;
    let rho = if degenerate {
        0.0
    } else {
        (tau / (sigma_g * sigma_h)).clamp(-1.0, 1.0)
    };
    let kappa = if sigma_g == 0.0 { 0.0 } else { sigma_h / sigma_g };
    Ok(AlignmentStats {
        sigma_g,
        sigma_h,
        tau,
        rho,
        kappa,
        n,
        mu,
        mu_h,
        degenerate,
    })
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("control fraction must lie in (0, 1], got {f}")))
    }
}

/// `E‖G − μ‖² = (σ_g² + (1−f)σ_h² − 2(1−f)τ) / (f·m)`.
pub fn v2_exact(stats: &AlignmentStats, f: f64, m: usize) -> Result<f64> {
    if stats.sigma_g == 0.0 {
        return Err(Error::DegenerateStats("sigma_g = 0".into()));
    }
    v2_from_moments(stats.sigma_g, stats.sigma_h, stats.tau, f, m)
}

/// [`v2_exact`] from raw moments.
pub fn v2_from_moments(sigma_g: f64, sigma_h: f64, tau: f64, f: f64, m: usize) -> Result<f64> {
    check_fraction(f)?;
    if m < 2 {
        return Err(Error::Domain(format!("mini-batch size must be >= 2, got {m}")));
    }
    if !(sigma_g > 0.0) {
        return Err(Error::DegenerateStats(format!("sigma_g must be > 0, got {sigma_g}")));
    }
    Ok((sigma_g * sigma_g + (1.0 - f) * sigma_h * sigma_h - 2.0 * (1.0 - f) * tau) / (f * m as f64))
}

/// `φ(f, ρ, κ) = (1 + (1−f)κ² − 2(1−f)ρκ) / f`, the variance of the combined
/// gradient relative to a plain mini-batch mean of the same size.
pub fn variance_inflation(f: f64, rho: f64, kappa: f64) -> Result<f64> {
    check_fraction(f)?;
    Ok((1.0 + (1.0 - f) * kappa * kappa - 2.0 * (1.0 - f) * rho * kappa) / f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, substream};
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_examples() {
        let mut rng = substream(1, stream::SPLIT);
        let s = split_minibatch(10, 0.2, &mut rng).unwrap();
        assert_eq!((s.control.len(), s.prediction.len()), (2, 8));
        assert!(!s.rounded);
        let s = split_minibatch(10, 1.0, &mut rng).unwrap();
        assert_eq!((s.control.len(), s.prediction.len()), (10, 0));
        let s = split_minibatch(7, 0.25, &mut rng).unwrap();
        assert_eq!(s.control.len(), 2);
        assert!(s.rounded);
        assert!(matches!(
            split_minibatch(3, 0.1, &mut rng),
            Err(Error::ControlBatchEmpty { .. })
        ));
        assert!(matches!(split_minibatch(3, 0.0, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn split_is_a_partition_and_uniform() {
        let mut rng = substream(2, stream::SPLIT);
        let mut hits = [0usize; 8];
        for _ in 0..4000 {
            let s = split_minibatch(8, 0.25, &mut rng).unwrap();
            let mut all: Vec<usize> = s.control.iter().chain(&s.prediction).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..8).collect::<Vec<_>>());
            for &c in &s.control {
                hits[c] += 1;
            }
        }
        // Each position is a control example with probability 1/4: 1000 ± ~27.
        assert!(hits.iter().all(|&h| (880..1120).contains(&h)), "{hits:?}");
    }

    #[test]
    fn combine_examples() {
        let g = combine_debiased(&[1.0], &[0.8], &[0.6], 0.5).unwrap();
        assert!((g[0] - 0.9).abs() < 1e-15);
        let g = combine_debiased(&[1.0, 2.0], &[3.0, -1.0], &[3.0, -1.0], 0.3).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);
        let g = combine_debiased(&[1.0, 2.0], &[1.0, 2.0], &[5.0, 6.0], 0.25).unwrap();
        assert_eq!(g, vec![0.25 * 1.0 + 0.75 * 5.0, 0.25 * 2.0 + 0.75 * 6.0]);
        assert_eq!(combine_debiased(&[4.0], &[9.0], &[7.0], 1.0).unwrap(), vec![4.0]);
        assert!(matches!(
            combine_debiased(&[1.0], &[1.0, 2.0], &[1.0], 0.5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sum_form_matches_mean_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m_c, m_p, dim) = (3, 9, 4);
        let g: Vec<Vec<f64>> = (0..m_c).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let hc: Vec<Vec<f64>> = (0..m_c).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let hp: Vec<Vec<f64>> = (0..m_p).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let mean = |v: &[Vec<f64>]| -> Vec<f64> {
            let mut s = vec![0.0; dim];
            v.iter().for_each(|x| axpy(1.0 / v.len() as f64, x, &mut s));
            s
        };
        let f = m_c as f64 / (m_c + m_p) as f64;
        let expected = combine_debiased(&mean(&g), &mean(&hc), &mean(&hp), f).unwrap();
        let mut batch_sum = vec![0.0; dim];
        let mut corr = vec![0.0; dim];
        for (gi, hi) in g.iter().zip(&hc) {
            axpy(1.0, gi, &mut batch_sum);
            axpy(1.0, gi, &mut corr);
            axpy(-1.0, hi, &mut corr);
        }
        hp.iter().for_each(|h| axpy(1.0, h, &mut batch_sum));
        let got = combine_sums(&batch_sum, &corr, m_c, m_p).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_identical_and_antiparallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let same: Vec<(Vec<f64>, Vec<f64>)> = g.iter().map(|x| (x.clone(), x.clone())).collect();
        let s = alignment_stats(&same).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-12 && (s.kappa - 1.0).abs() < 1e-12);
        let anti: Vec<(Vec<f64>, Vec<f64>)> = g.iter().map(|x| (x.clone(), x.iter().map(|v| -v).collect())).collect();
        let s = alignment_stats(&anti).unwrap();
        assert!((s.rho + 1.0).abs() < 1e-12 && (s.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_matches_brute_force_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..30)
            .map(|_| {
                let g: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let h: Vec<f64> = g.iter().map(|v| 0.7 * v + rng.random_range(-0.5..0.5)).collect();
                (g, h)
            })
            .collect();
        let s = alignment_stats(&pairs).unwrap();
        // Oracle: coordinate-wise loops, E‖g‖² − ‖μ‖² style is avoided in favour of
        // explicit centring over a double index.
        let n = pairs.len() as f64;
        let (mut sg, mut sh, mut t) = (0.0, 0.0, 0.0);
        for j in 0..6 {
            let mg: f64 = pairs.iter().map(|p| p.0[j]).sum::<f64>() / n;
            let mh: f64 = pairs.iter().map(|p| p.1[j]).sum::<f64>() / n;
            for p in &pairs {
                sg += (p.0[j] - mg).powi(2) / n;
                sh += (p.1[j] - mh).powi(2) / n;
                t += (p.0[j] - mg) * (p.1[j] - mh) / n;
            }
        }
        assert!((s.sigma_g - sg.sqrt()).abs() < 1e-12);
        assert!((s.sigma_h - sh.sqrt()).abs() < 1e-12);
        assert!((s.tau - t).abs() < 1e-12);
        assert!((s.rho - t / (sg.sqrt() * sh.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn alignment_degenerate_and_errors() {
        let pairs = vec![(vec![1.0, 2.0], vec![0.5, 0.0]), (vec![1.0, 2.0], vec![0.0, 0.5])];
        let s = alignment_stats(&pairs).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.rho, s.kappa), (0.0, 0.0));
        assert!(matches!(v2_exact(&s, 0.5, 10), Err(Error::DegenerateStats(_))));
        assert!(matches!(alignment_stats(&pairs[..1]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn v2_examples() {
        let v = v2_from_moments(1.5, 1.5, 2.25, 0.3, 40).unwrap();
        assert!((v - 2.25 / 40.0).abs() < 1e-15);
        // τ = 0, κ = 1, f = 0.5: (1 + 0.5)/(0.5 m) = 3/m.
        let v = v2_from_moments(1.0, 1.0, 0.0, 0.5, 10).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn inflation_examples() {
        for f in [0.01, 0.2, 0.7, 1.0] {
            assert!((variance_inflation(f, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        for (rho, kappa) in [(0.0, 3.0), (-0.5, 0.2)] {
            assert_eq!(variance_inflation(1.0, rho, kappa).unwrap(), 1.0);
        }
        assert!((variance_inflation(0.5, 0.8, 1.0).unwrap() - 1.4).abs() < 1e-12);
        assert!(matches!(variance_inflation(0.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn inflation_decreases_in_rho() {
        for f in [0.05, 0.25, 0.5, 0.9] {
            for kappa in [0.5, 1.0, 2.0] {
                let phis: Vec<f64> = (-10..=10)
                    .map(|i| variance_inflation(f, i as f64 / 10.0, kappa).unwrap())
                    .collect();
                assert!(phis.windows(2).all(|w| w[1] < w[0]));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn two_estimator_forms_coincide(
                g in proptest::collection::vec(-10.0f64..10.0, 5),
                hc in proptest::collection::vec(-10.0f64..10.0, 5),
                hp in proptest::collection::vec(-10.0f64..10.0, 5),
                f in 0.01f64..1.0,
            ) {
                let a = combine_debiased(&g, &hc, &hp, f).unwrap();
                let b = combine_control_variate(&g, &hc, &hp, f).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
                }
            }

            #[test]
            fn rho_hat_bounded(
                data in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 2..12),
            ) {
                let pairs: Vec<(Vec<f64>, Vec<f64>)> =
                    data.iter().map(|v| (v[..3].to_vec(), v[3..].to_vec())).collect();
                let s = alignment_stats(&pairs).unwrap();
                prop_assert!(s.rho.abs() <= 1.0);
                prop_assert!(s.tau.abs() <= s.sigma_g * s.sigma_h * (1.0 + 1e-12) + 1e-300);
            }

            #[test]
            fn v2_forms_agree(
                sg in 0.1f64..3.0, kappa in 0.1f64..3.0, rho in -1.0f64..1.0,
                f in 0.01f64..0.99, m in 2usize..500,
            ) {
                let sh = kappa * sg;
                let tau = rho * sg * sh;
                let direct = v2_from_moments(sg, sh, tau, f, m).unwrap();
                let via_phi = sg * sg / m as f64 * variance_inflation(f, rho, kappa).unwrap();
                prop_assert!((direct - via_phi).abs() <= 1e-12 * direct.abs().max(1e-12));
            }
        }
    }
}
