mod common;

use common::*;
use mrha_core::autodiff::{Eager, Graph, ParamId, Tape};
use mrha_core::model::{init_parameters, ModelConfig};
use mrha_core::skeleton::{ActivityClass, ActivityLabel, LabeledSample};
use mrha_core::tensor::Tensor;
use mrha_core::train::*;

fn tiny_samples(n: usize, frames: usize, seed: u64) -> Vec<LabeledSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| LabeledSample {
            frames: (0..frames).map(|_| random_tensor(&[1, 16, 16], &mut r, 1.0).map(f64::abs)).collect(),
            label: ActivityLabel::with_default_policy(ActivityClass::ALL[i % 3]),
            subject_id: i as u32 + 1,
            camera_id: 1,
            source: format!("tiny{i}"),
        })
        .collect()
}

#[test]
fn uniform_prediction_costs_ln_k() {
    let p = Tensor::full(&[12], 1.0 / 12.0);
    for c in 0..12 {
        assert!((cross_entropy_loss(&p, c).unwrap() - 12f64.ln()).abs() < 1e-9);
    }
}

#[test]
fn softmax_nll_gradient_is_p_minus_onehot() {
    let mut r = rng(31);
    for trial in 0..20 {
        let logits = random_tensor(&[12], &mut r, 3.0);
        let target = trial % 12;
        let mut tape = Tape::new();
        let z = tape.param(ParamId(0), &logits);
        let p = tape.softmax(&z).unwrap();
        let loss = tape.nll(&p, target, 1e-12).unwrap();
        let g = tape.backward(loss).unwrap().into_ordered(1).remove(0);

        let numeric = central_differences(&logits, 1e-6, |probe| {
            let mut e = Eager;
            let q = e.softmax(probe).unwrap();
            e.nll(&q, target, 1e-12).unwrap().item()
        });
        // closed form from an independent scalar softmax
        let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for k in 0..12 {
            let expected = exps[k] / sum - f64::from(k == target);
            assert!((g.data()[k] - expected).abs() < 1e-12);
            assert!(relative_error(g.data()[k], numeric[k], 1e-6) < 1e-6, "{k}");
        }
    }
}

/// Scalar Adam written from the update rule, on f(x) = sum a_i (x_i - c_i)^2 / 2.
fn scalar_adam(x0: &[f64], a: &[f64], c: &[f64], lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut path = Vec::new();
    for t in 1..=steps {
        for i in 0..x.len() {
            let g = a[i] * (x[i] - c[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
        path.push(x.clone());
    }
    path
}

#[test]
fn adam_tracks_scalar_reference_on_quadratic() {
    let (x0, a, c) = ([3.0, -2.0, 0.5, 8.0], [1.0, 4.0, 0.25, 2.0], [0.0, 1.0, -1.0, 2.0]);
    let lr = 0.1;
    let reference = scalar_adam(&x0, &a, &c, lr, 50);
    let cfg = OptimizerConfig {
        learning_rate: lr,
        ..Default::default()
    };
    let mut params = vec![Tensor::new(vec![4], x0.to_vec()).unwrap()];
    let mut opt = Optimizer::new(cfg, &params);
    let mut worst = 0.0f64;
    for expected in &reference {
        let g = Tensor::from_fn(&[4], |i| a[i] * (params[0].data()[i] - c[i]));
        opt.update(&mut params, &[g]).unwrap();
        for (p, e) in params[0].data().iter().zip(expected) {
            worst = worst.max((p - e).abs());
        }
    }
    assert!(worst < 0.05, "max deviation {worst}");
    assert!(worst < 1e-12, "same arithmetic should agree to rounding: {worst}");
}

#[test]
fn sgd_rmsprop_adagrad_scalar_updates() {
    let x0 = [1.0, -3.0];
    let g = [0.5, -2.0];
    let lr = 0.1;
    let (rho, eps) = (0.9, 1e-8);
    let cases: [(OptimizerKind, fn(f64, f64, f64) -> f64); 3] = [
        (OptimizerKind::Sgd, |x, g, lr| x - lr * g),
        (OptimizerKind::Rmsprop, |x, g, lr| x - lr * g / (((1.0 - 0.9) * g * g).sqrt() + 1e-8)),
        (OptimizerKind::Adagrad, |x, g, lr| x - lr * g / ((g * g).sqrt() + 1e-8)),
    ];
    for (kind, step) in cases {
        let cfg = OptimizerConfig {
            kind,
            learning_rate: lr,
            rho,
            epsilon: eps,
            ..Default::default()
        };
        let mut p = Tensor::new(vec![2], x0.to_vec()).unwrap();
        let mut s = MomentState::zeros_like(&p);
        optimizer_step(&mut p, &Tensor::new(vec![2], g.to_vec()).unwrap(), &mut s, 1, &cfg).unwrap();
        for i in 0..2 {
            assert!((p.data()[i] - step(x0[i], g[i], lr)).abs() < 1e-15, "{kind:?}");
        }
    }
    // Adagrad accumulates: second identical step divides by sqrt(2) |g|
    let cfg = OptimizerConfig {
        kind: OptimizerKind::Adagrad,
        learning_rate: lr,
        ..Default::default()
    };
    let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
    let mut s = MomentState::zeros_like(&p);
    let grad = Tensor::new(vec![1], vec![2.0]).unwrap();
    optimizer_step(&mut p, &grad, &mut s, 1, &cfg).unwrap();
    optimizer_step(&mut p, &grad, &mut s, 2, &cfg).unwrap();
    let expected = -lr * 2.0 / (2.0 + 1e-8) - lr * 2.0 / (8f64.sqrt() + 1e-8);
    assert!((p.data()[0] - expected).abs() < 1e-15);
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let cfg = ModelConfig::gradient_check();
    let params = init_parameters(&cfg, 5).unwrap();
    let samples = tiny_samples(6, 2, 40);
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::Rmsprop, OptimizerKind::Adagrad] {
        let tc = TrainConfig {
            learning_rate: 0.0,
            optimizer: kind,
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let out = train(params.clone(), &samples, &tc, |_| true).unwrap();
        for (a, b) in out.params.tensors().iter().zip(params.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{kind:?}");
        }
    }
}

#[test]
fn training_is_reproducible() {
    let cfg = ModelConfig::gradient_check();
    let samples = tiny_samples(5, 2, 41);
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 3,
        batch_size: 2,
        seed: 9,
        ..Default::default()
    };
    let run = || train(init_parameters(&cfg, 1).unwrap(), &samples, &tc, |_| true).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.params, b.params);
    let other = train(
        init_parameters(&cfg, 1).unwrap(),
        &samples,
        &TrainConfig { seed: 10, ..tc.clone() },
        |_| true,
    )
    .unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn memorizes_a_single_sample() {
    let mut cfg = ModelConfig::gradient_check();
    cfg.dropout_rate = 0.0;
    let samples = tiny_samples(1, 2, 42);
    let tc = TrainConfig {
        learning_rate: 0.05,
        epochs: 40,
        batch_size: 1,
        ..Default::default()
    };
    let out = train(init_parameters(&cfg, 2).unwrap(), &samples, &tc, |_| true).unwrap();
    let report = evaluate(&out.params, &samples).unwrap();
    assert_eq!(report.accuracy, 1.0);
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn early_stop_and_callback_stop() {
    let cfg = ModelConfig::gradient_check();
    let samples = tiny_samples(3, 1, 43);
    let tc = TrainConfig {
        learning_rate: 0.0,
        epochs: 10,
        early_stop_patience: Some(2),
        ..Default::default()
    };
    let out = train(init_parameters(&cfg, 3).unwrap(), &samples, &tc, |_| true).unwrap();
    assert!(out.stopped_early);
    assert!(out.history.len() < 10);
    let tc = TrainConfig { early_stop_patience: None, ..tc };
    let out = train(init_parameters(&cfg, 3).unwrap(), &samples, &tc, |r| r.epoch < 4).unwrap();
    assert_eq!(out.history.len(), 4);
}

#[test]
fn shape_and_label_mismatches_rejected_before_training() {
    let cfg = ModelConfig::gradient_check();
    let params = init_parameters(&cfg, 0).unwrap();
    let mut wrong_grid = tiny_samples(2, 1, 44);
    wrong_grid[1].frames[0] = Tensor::zeros(&[1, 32, 32]);
    assert!(train(params.clone(), &wrong_grid, &TrainConfig::default(), |_| true).is_err());
    let mut wrong_label = tiny_samples(2, 1, 45);
    wrong_label[0].label = ActivityLabel::with_default_policy(ActivityClass::A105);
    let err = check_samples(&params, &wrong_label).unwrap_err().to_string();
    assert!(err.contains("A105"), "{err}");
}

/// Precision, recall and F1 by direct counting.
#[test]
fn report_matches_counting_oracle() {
    let pairs = [(0, 0), (0, 1), (1, 1), (1, 1), (2, 0), (2, 2), (2, 2), (0, 0)];
    let k = 4;
    let r = EvalReport::from_predictions(k, &pairs).unwrap();
    let count = |f: &dyn Fn(&(usize, usize)) -> bool| pairs.iter().filter(|p| f(p)).count() as f64;
    assert!((r.accuracy - count(&|p| p.0 == p.1) / 8.0).abs() < 1e-15);
    let mut f1s = Vec::new();
    for c in 0..3 {
        let tp = count(&|p| p.0 == c && p.1 == c);
        let prec = tp / count(&|p| p.1 == c);
        let rec = tp / count(&|p| p.0 == c);
        let f1 = 2.0 * prec * rec / (prec + rec);
        let m = &r.per_class[c];
        assert!((m.precision.unwrap() - prec).abs() < 1e-15);
        assert!((m.recall.unwrap() - rec).abs() < 1e-15);
        assert!((m.f1.unwrap() - f1).abs() < 1e-15);
        f1s.push(f1);
    }
    // class 3 never occurs and is never predicted
    assert_eq!(r.per_class[3].support, 0);
    assert_eq!(r.per_class[3].precision, None);
    assert!((r.macro_f1 - f1s.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert_eq!(r.confusion[2], vec![1, 0, 2, 0]);
}
