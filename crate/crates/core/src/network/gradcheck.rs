//! Central finite differences against `backward`.

use super::{loss_and_residual, LossKind, Model, Target};
use crate::error::Result;

/// Denominator floor for relative errors on near-zero coordinates.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `∂l/∂θ_j ≈ (l(θ + h·e_j) − l(θ − h·e_j)) / 2h` for every coordinate.
pub fn finite_difference_gradient<M: Model>(
    model: &M,
    x: &[f64],
    target: &Target,
    loss: LossKind,
    smoothing: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let theta = model.params();
    let mut probe = model.clone();
    let mut shifted = theta.clone();
    let mut eval = |shifted: &[f64]| -> Result<f64> {
        probe.set_params(shifted)?;
        let (_, out) = probe.cheap_forward(x, false)?;
        Ok(loss_and_residual(&out, target, loss, smoothing)?.0)
    };
    let mut g = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        shifted[j] = theta[j] + h;
        let up = eval(&shifted)?;
        shifted[j] = theta[j] - h;
        let down = eval(&shifted)?;
        shifted[j] = theta[j];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `max_j |a_j − b_j| / max(|a_j|, |b_j|, RELATIVE_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

/// Largest relative disagreement between `backward` and finite differences
/// at one example.
pub fn check_gradient<M: Model>(model: &M, x: &[f64], target: &Target, loss: LossKind, smoothing: f64) -> Result<f64> {
    let fp = model.forward(x)?;
    let (_, r) = loss_and_residual(&fp.output, target, loss, smoothing)?;
    let analytic = model.backward(&fp.cache, &r)?.flatten();
    let numeric = finite_difference_gradient(model, x, target, loss, smoothing, 1e-5)?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, LinearModel, LinearModelConfig, Network, NetworkConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_tanh_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..25 {
            let depth = rng.random_range(1..=3);
            let outputs = rng.random_range(1..=3);
            let net = Network::new(NetworkConfig {
                input_dim: rng.random_range(1..=4),
                hidden_widths: (0..depth).map(|_| rng.random_range(1..=5)).collect(),
                output_dim: outputs,
                activation: Activation::Tanh,
                seed: trial,
            })
            .unwrap();
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (target, loss) = if outputs > 1 && trial % 2 == 0 {
                (Target::Class(rng.random_range(0..outputs)), LossKind::CrossEntropy)
            } else {
                let y = (0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
                (
                    Target::Values(y),
                    if outputs == 1 {
                        LossKind::SquaredScalar
                    } else {
                        LossKind::SquaredVector
                    },
                )
            };
            let err = check_gradient(&net, &x, &target, loss, 0.1).unwrap();
            assert!(err <= 1e-5, "trial {trial}: {err}");
        }
    }

    #[test]
    fn linear_model_matches() {
        let mut m = LinearModel::zeros(LinearModelConfig {
            trunk_inputs: 2,
            head_inputs: 2,
            outputs: 2,
        })
        .unwrap();
        m.set_params(&[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0])
            .unwrap();
        let err = check_gradient(
            &m,
            &[1.0, 2.0, -1.0, 0.5],
            &Target::Values(vec![0.3, -0.2]),
            LossKind::SquaredVector,
            0.0,
        )
        .unwrap();
        assert!(err <= 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[0.0], &[1e-6]), 1e-3);
        assert_eq!(max_relative_error(&[2.0], &[1.0]), 0.5);
    }
}
