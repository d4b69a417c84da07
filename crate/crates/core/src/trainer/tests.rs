use super::*;
use crate::analysis::CostModel;
use crate::data::{gen_blobs, gen_regression};
use crate::estimator::split_minibatch;
use crate::linalg::{norm, solve_ridge, Matrix};
use crate::network::{Activation, LinearModel, LinearModelConfig, Network, NetworkConfig, Target};
use crate::rng::{stream, substream};
use rand::seq::index;

fn regression() -> (Dataset, Network) {
    let (mut data, _) = gen_regression(120, 3, 0.1, 21).unwrap();
    data.split_last(0.2).unwrap();
    let net = Network::new(NetworkConfig {
        input_dim: 3,
        hidden_widths: vec![8, 6],
        output_dim: 1,
        activation: Activation::Tanh,
        seed: 5,
    })
    .unwrap();
    (data, net)
}

fn base_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        control_fraction: 0.25,
        learning_rate: 0.05,
        refit: RefitPolicy {
            period: 5,
            buffer_capacity: 64,
            ridge_lambda: None,
        },
        predictor: PredictorMode::Fitted(PredictorKind::Scalar),
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn optimizer_examples() {
    let mut st = OptimizerState::default();
    let mut theta = vec![1.0];
    optimizer_step(OptimizerKind::Sgd, &mut theta, &[0.5], &mut st, 0.1, 0.0).unwrap();
    assert!((theta[0] - 0.95).abs() < 1e-15);
    let mut theta = vec![1.0, -2.0];
    optimizer_step(OptimizerKind::Sgd, &mut theta, &[3.0, 4.0], &mut st, 0.0, 0.0).unwrap();
    assert_eq!(theta, vec![1.0, -2.0]);

    let mut a = vec![0.3, -0.7];
    let mut b = a.clone();
    let mut sa = OptimizerState::default();
    let mut sb = OptimizerState::default();
    for g in [[0.1, 0.2], [-0.4, 0.05], [0.9, -0.3]] {
        optimizer_step(OptimizerKind::Sgd, &mut a, &g, &mut sa, 0.2, 0.0).unwrap();
        optimizer_step(OptimizerKind::SgdMomentum, &mut b, &g, &mut sb, 0.2, 0.0).unwrap();
    }
    assert_eq!(a, b);

    let mut theta = vec![0.0];
    let mut st = OptimizerState::default();
    optimizer_step(OptimizerKind::SgdMomentum, &mut theta, &[1.0], &mut st, 1.0, 0.5).unwrap();
    optimizer_step(OptimizerKind::SgdMomentum, &mut theta, &[1.0], &mut st, 1.0, 0.5).unwrap();
    assert_eq!(theta, vec![-2.5]);
    assert!(matches!(
        optimizer_step(OptimizerKind::Sgd, &mut theta, &[1.0, 2.0], &mut st, 1.0, 0.0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn ledger_per_batch_costs() {
    let (data, _) = gen_regression(100, 3, 0.0, 1).unwrap();
    let net = Network::new(NetworkConfig {
        input_dim: 3,
        hidden_widths: vec![4],
        output_dim: 1,
        activation: Activation::Tanh,
        seed: 1,
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 100,
        control_fraction: 0.2,
        predictor: PredictorMode::Perfect,
        warmup: false,
        ..base_cfg()
    };
    let (_, rv) = train_vanilla(&cfg, &data, net.clone()).unwrap();
    assert_eq!(rv.len(), 1);
    assert_eq!(rv[0].cost_units, 300.0);
    let (_, rp) = train_predicted(&cfg, &data, net, None).unwrap();
    assert!((rp[0].cost_units - 116.0).abs() < 1e-9);
    let g = crate::analysis::gamma(&CostModel::default(), 0.2).unwrap();
    assert!((rp[0].cost_units / rv[0].cost_units - g).abs() < 1e-12);
}

#[test]
fn one_example_one_step() {
    let (data, net) = regression();
    let one = Dataset::new(vec![data.features[0].clone()], vec![data.targets[0].clone()], None).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        ..base_cfg()
    };
    let (_, g) = oracle_gradient(&net, &one.features[0], &one.targets[0], cfg.loss, 0.0).unwrap();
    let (after, _) = train_vanilla(&cfg, &one, net.clone()).unwrap();
    for ((a, b), gi) in after.params().iter().zip(net.params()).zip(&g) {
        assert!((a - (b - cfg.learning_rate * gi)).abs() < 1e-15);
    }
}

fn linear_task(n: usize, seed: u64, noise: f64) -> Dataset {
    let mut rng = substream(seed, stream::DATA);
    use rand::Rng as _;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let xh: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Trunk inputs track the head inputs, so the scalar predictor is good.
        let xt = vec![
            xh[0] + 0.5 * rng.random_range(-1.0..1.0),
            xh[1] - xh[0] + 0.5 * rng.random_range(-1.0..1.0),
        ];
        let y = 0.5 * xt[0] - 1.0 * xt[1] + 2.0 * xh[0] + 0.3 * xh[1] + 0.7 + noise * rng.random_range(-1.0..1.0);
        xs.push([xt, xh].concat());
        ys.push(Target::Values(vec![y]));
    }
    Dataset::new(xs, ys, None).unwrap()
}

fn ridge_optimum(data: &Dataset, wd: f64) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = data.features.iter().map(|x| [x.clone(), vec![1.0]].concat()).collect();
    let ys: Vec<Vec<f64>> = data
        .targets
        .iter()
        .map(|t| match t {
            Target::Values(v) => v.clone(),
            Target::Class(_) => unreachable!(),
        })
        .collect();
    let a = Matrix::from_rows(&rows).unwrap();
    let b = Matrix::from_rows(&ys).unwrap();
    solve_ridge(&a, &b, data.len() as f64 * wd).unwrap().into_vec()
}

#[test]
fn vanilla_reaches_quadratic_minimizer() {
    let data = linear_task(64, 2, 0.05);
    let model = LinearModel::zeros(LinearModelConfig {
        trunk_inputs: 2,
        head_inputs: 2,
        outputs: 1,
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3000,
        batch_size: 64,
        learning_rate: 0.5,
        weight_decay: 1e-3,
        ..base_cfg()
    };
    let (m, _) = train_vanilla(&cfg, &data, model).unwrap();
    let star = ridge_optimum(&data, 1e-3);
    let dist = norm(&m.params().iter().zip(&star).map(|(a, b)| a - b).collect::<Vec<_>>());
    assert!(dist < 1e-4, "{dist}");
}

#[test]
fn perfect_predictor_matches_vanilla_bitwise() {
    let (data, net) = regression();
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::SgdMomentum] {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 12,
            control_fraction: 0.25,
            predictor: PredictorMode::Perfect,
            warmup: false,
            optimizer,
            momentum: 0.9,
            weight_decay: 1e-4,
            ..base_cfg()
        };
        let (mv, rv) = train_vanilla(&cfg, &data, net.clone()).unwrap();
        let (mp, rp) = train_predicted(&cfg, &data, net.clone(), None).unwrap();
        assert_eq!(rv.len(), rp.len());
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(mv.params()), bits(mp.params()));
        for (a, b) in rv.iter().zip(&rp) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert!((b.rho_hat - 1.0).abs() < 1e-12 && (b.kappa_hat - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn runs_are_deterministic_across_execution_modes() {
    let (data, net) = regression();
    let cfg = base_cfg();
    let (m1, r1) = train_predicted(&cfg, &data, net.clone(), None).unwrap();
    let seq = TrainConfig {
        execution: crate::parallel::Execution::Sequential,
        ..cfg.clone()
    };
    let (m2, r2) = train_predicted(&seq, &data, net, None).unwrap();
    assert_eq!(m1.params(), m2.params());
    assert_eq!(r1.len(), r2.len());
    assert!(r1.iter().zip(&r2).all(|(a, b)| a.bit_eq(b)));
    assert!(r1.iter().any(|r| r.refit));
    assert!(r1
        .windows(2)
        .all(|w| w[1].step == w[0].step + 1 && w[1].cost_units > w[0].cost_units));
}

#[test]
fn resume_continues_bit_exactly() {
    let (data, net) = regression();
    let cfg = TrainConfig {
        epochs: 4,
        ..base_cfg()
    };
    let (_, full) = train_predicted(&cfg, &data, net.clone(), None).unwrap();

    let half = TrainConfig {
        max_steps: Some(9),
        ..cfg.clone()
    };
    let mut t = Trainer::new(half, &data, net, Algorithm::Predicted).unwrap();
    let first = t.run(&mut |_| Ok(())).unwrap().records;
    let state = t.into_state();
    let mut t = Trainer::resume(cfg, &data, state).unwrap();
    let second = t.run(&mut |_| Ok(())).unwrap().records;
    let joined: Vec<StepRecord> = first.into_iter().chain(second).collect();
    assert_eq!(joined.len(), full.len());
    assert!(joined.iter().zip(&full).all(|(a, b)| a.bit_eq(b)));
}

#[test]
fn budget_rules() {
    let (data, net) = regression();
    let m = 16;
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: m,
        budget: Some(3.0 * m as f64 * 5.0),
        predictor: PredictorMode::Perfect,
        warmup: false,
        control_fraction: 0.25,
        ..base_cfg()
    };
    let (_, rv) = train_vanilla(&cfg, &data, net.clone()).unwrap();
    assert_eq!(rv.len(), 5);
    let (_, rp) = train_predicted(&cfg, &data, net.clone(), None).unwrap();
    let g = crate::analysis::gamma(&cfg.cost_model, 0.25).unwrap();
    let expected = (5.0 / g).floor() as i64;
    assert!((rp.len() as i64 - expected).abs() <= 1, "{} vs {expected}", rp.len());
    assert!(rp.last().unwrap().cost_units <= cfg.budget.unwrap());

    let tiny = TrainConfig {
        budget: Some(10.0),
        ..cfg.clone()
    };
    assert!(matches!(
        train_vanilla(&tiny, &data, net.clone()),
        Err(Error::Budget(_))
    ));
    let zero = TrainConfig {
        budget: Some(0.0),
        ..cfg
    };
    assert!(matches!(train_vanilla(&zero, &data, net), Err(Error::Budget(_))));
}

#[test]
fn config_and_data_errors() {
    let (data, net) = regression();
    let empty = TrainConfig {
        batch_size: 3,
        control_fraction: 0.1,
        ..base_cfg()
    };
    assert!(matches!(
        train_predicted(&empty, &data, net.clone(), None),
        Err(Error::ControlBatchEmpty { .. })
    ));
    let mut no_train = data.clone();
    no_train.train.clear();
    assert!(matches!(
        train_vanilla(&base_cfg(), &no_train, net.clone()),
        Err(Error::Data(_))
    ));
    let no_warm = TrainConfig {
        warmup: false,
        ..base_cfg()
    };
    assert!(matches!(
        train_predicted(&no_warm, &data, net.clone(), None),
        Err(Error::Config(_))
    ));
    let ce = TrainConfig {
        loss: crate::network::LossKind::CrossEntropy,
        ..base_cfg()
    };
    assert!(matches!(train_vanilla(&ce, &data, net.clone()), Err(Error::Config(_))));

    let other = Network::new(NetworkConfig {
        input_dim: 3,
        hidden_widths: vec![5, 6],
        output_dim: 1,
        activation: Activation::Tanh,
        seed: 1,
    })
    .unwrap();
    let (_, sample_records) = train_predicted(&base_cfg(), &data, other.clone(), None).unwrap();
    assert!(!sample_records.is_empty());
    // A predictor fitted on another architecture has the wrong trunk length.
    let mut t = Trainer::new(base_cfg(), &data, other, Algorithm::Predicted).unwrap();
    t.run(&mut |_| Ok(())).unwrap();
    let foreign = t.into_state().predictor;
    assert!(matches!(
        train_predicted(&base_cfg(), &data, net, foreign),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn combined_gradient_is_unbiased_in_place() {
    let (data, net) = regression();
    let cfg = base_cfg();
    let mut t = Trainer::new(cfg.clone(), &data, net, Algorithm::Predicted).unwrap();
    t.run(&mut |_| Ok(())).unwrap();
    let state = t.into_state();
    let predictor = state.predictor.unwrap();
    let model = state.model;
    let (_, full) = full_gradient(&model, &data, &data.train, cfg.loss, 0.0, cfg.execution).unwrap();

    let trials = 10_000;
    let m = 12;
    let mut rng = substream(99, stream::SHUFFLE);
    let mut sum = vec![0.0; full.len()];
    let mut sq = 0.0;
    for _ in 0..trials {
        let batch: Vec<usize> = index::sample(&mut rng, data.train.len(), m)
            .into_iter()
            .map(|k| data.train[k])
            .collect();
        let split = split_minibatch(m, 0.25, &mut rng).unwrap();
        let g = combined_gradient(
            &model,
            &data,
            &batch,
            &split,
            PredictionSource::Fitted(&predictor),
            cfg.loss,
            0.0,
            crate::parallel::Execution::Sequential,
        )
        .unwrap();
        for ((s, gi), fi) in sum.iter_mut().zip(&g).zip(&full) {
            *s += gi;
            sq += (gi - fi) * (gi - fi);
        }
    }
    let t = trials as f64;
    let err = norm(&sum.iter().zip(&full).map(|(s, f)| s / t - f).collect::<Vec<_>>());
    let se = (sq / t / t).sqrt();
    assert!(err <= 4.0 * se, "{err} vs {se}");
}

#[test]
fn classification_run_reports_accuracy() {
    let mut data = gen_blobs(300, 3, 4, 6.0, 3).unwrap();
    data.split_last(0.2).unwrap();
    let net = Network::new(NetworkConfig {
        input_dim: 4,
        hidden_widths: vec![8],
        output_dim: 3,
        activation: Activation::Tanh,
        seed: 2,
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 20,
        loss: crate::network::LossKind::CrossEntropy,
        learning_rate: 0.2,
        predictor: PredictorMode::Fitted(PredictorKind::Structured { rank: None }),
        refit: RefitPolicy {
            period: 10,
            buffer_capacity: 120,
            ridge_lambda: None,
        },
        ..base_cfg()
    };
    let (_, records) = train_predicted(&cfg, &data, net, None).unwrap();
    let last = records.last().unwrap();
    assert!(last.val_metric > 0.9, "{last:?}");
    assert!(records.iter().all(|r| r.rho_hat.abs() <= 1.0));
}

#[test]
fn metrics_csv_header_is_stable() {
    let mut buf = Vec::new();
    write_metrics_csv(&[], &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        "step,epoch,cost_units,loss,val_metric,rho_hat,kappa_hat,phi_hat,rho_hat_full,kappa_hat_full,phi_hat_full,refit"
    );
}

#[test]
fn parse_modes() {
    assert_eq!("perfect".parse::<PredictorMode>().unwrap(), PredictorMode::Perfect);
    assert_eq!(
        "structured:3".parse::<PredictorMode>().unwrap(),
        PredictorMode::Fitted(PredictorKind::Structured { rank: Some(3) })
    );
    assert_eq!("momentum".parse::<OptimizerKind>().unwrap(), OptimizerKind::SgdMomentum);
    assert!("adam".parse::<OptimizerKind>().is_err());
}
