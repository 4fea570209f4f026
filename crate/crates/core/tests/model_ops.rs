mod common;

use common::*;
use mrha_core::autodiff::{Eager, Graph, ParamId, Tape};
use mrha_core::model::*;
use mrha_core::tensor::{self, Activation, Padding, Tensor};

fn zero_se(c: usize, r: usize) -> SeWeights<Tensor> {
    SeWeights {
        reduce_weight: Tensor::zeros(&[c / r, c]),
        reduce_bias: Tensor::zeros(&[c / r]),
        expand_weight: Tensor::zeros(&[c, c / r]),
        expand_bias: Tensor::zeros(&[c]),
    }
}

fn random_se(c: usize, r: usize, rng: &mut rand_chacha::ChaCha8Rng) -> SeWeights<Tensor> {
    SeWeights {
        reduce_weight: random_tensor(&[c / r, c], rng, 1.0),
        reduce_bias: random_tensor(&[c / r], rng, 1.0),
        expand_weight: random_tensor(&[c, c / r], rng, 1.0),
        expand_bias: random_tensor(&[c], rng, 1.0),
    }
}

#[test]
fn se_with_zero_params_halves_input() {
    let mut r = rng(1);
    let x = random_tensor(&[4, 3, 3], &mut r, 2.0);
    let y = se_recalibrate(&x, &zero_se(4, 2)).unwrap();
    assert!(y.max_abs_diff(&x.scale(0.5)) < 1e-15);
}

#[test]
fn se_on_zero_map_is_zero() {
    let mut r = rng(2);
    let se = random_se(4, 2, &mut r);
    let y = se_recalibrate(&Tensor::zeros(&[4, 3, 3]), &se).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn se_matches_scalar_oracle() {
    let mut r = rng(3);
    let (c, red, h, w) = (6, 3, 4, 5);
    let x = random_tensor(&[c, h, w], &mut r, 1.0);
    let se = random_se(c, red, &mut r);
    let y = se_recalibrate(&x, &se).unwrap();

    let sq = c / red;
    let mut pooled = vec![0.0; c];
    for ch in 0..c {
        for i in 0..h * w {
            pooled[ch] += x.data()[ch * h * w + i];
        }
        pooled[ch] /= (h * w) as f64;
    }
    let mut z = vec![0.0; sq];
    for j in 0..sq {
        let mut a = se.reduce_bias.data()[j];
        for ch in 0..c {
            a += se.reduce_weight.data()[j * c + ch] * pooled[ch];
        }
        z[j] = if a > 0.0 { a } else { 0.0 };
    }
    for ch in 0..c {
        let mut a = se.expand_bias.data()[ch];
        for j in 0..sq {
            a += se.expand_weight.data()[ch * sq + j] * z[j];
        }
        let s = scalar_sigmoid(a);
        assert!(s > 0.0 && s < 1.0);
        for i in 0..h * w {
            let idx = ch * h * w + i;
            assert!((y.data()[idx] - s * x.data()[idx]).abs() < 1e-12);
        }
    }
}

#[test]
fn se_rejects_mismatched_reduction() {
    let se = zero_se(4, 2);
    assert!(matches!(
        se_recalibrate(&Tensor::zeros(&[6, 2, 2]), &se),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn mbconv_identity_composition() {
    let mut r = rng(4);
    let x = random_tensor(&[3, 5, 5], &mut r, 1.0);
    let spec = MbConvSpec::new(1, 3, 2, 1, 1, 1);
    let mut se = zero_se(3, 1);
    se.expand_bias = Tensor::full(&[3], 60.0);
    let project = random_tensor(&[2, 3, 1, 1], &mut r, 1.0);
    let w = MbConvWeights {
        expand: None,
        depthwise: (Tensor::ones(&[3, 1, 1, 1]), Tensor::zeros(&[3])),
        se,
        project: (project.clone(), Tensor::zeros(&[2])),
    };
    let y = mbconv_forward(&x, &spec, &w).unwrap();
    let activated = tensor::elementwise(Activation::Swish, &x);
    let expected = tensor::conv2d(&activated, &project, None, 1, Padding::Same).unwrap();
    // sigmoid(60) differs from 1 by ~1e-26
    assert!(y.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn mbconv_residual_passthrough_is_exact() {
    let mut r = rng(5);
    let x = random_tensor(&[4, 6, 6], &mut r, 1.0);
    let spec = MbConvSpec::new(2, 4, 4, 3, 1, 2);
    assert!(spec.has_residual);
    let w = MbConvWeights {
        expand: Some((Tensor::zeros(&[8, 4, 1, 1]), Tensor::zeros(&[8]))),
        depthwise: (Tensor::zeros(&[8, 1, 3, 3]), Tensor::zeros(&[8])),
        se: zero_se(8, 2),
        project: (Tensor::zeros(&[4, 8, 1, 1]), Tensor::zeros(&[4])),
    };
    assert_eq!(mbconv_forward(&x, &spec, &w).unwrap(), x);
}

#[test]
fn mbconv_matches_chained_tensor_ops() {
    let mut r = rng(6);
    let x = random_tensor(&[8, 16, 16], &mut r, 1.0);
    let spec = MbConvSpec::new(4, 8, 12, 3, 2, 4);
    let e = 32;
    let w = MbConvWeights {
        expand: Some((random_tensor(&[e, 8, 1, 1], &mut r, 0.5), random_tensor(&[e], &mut r, 0.5))),
        depthwise: (random_tensor(&[e, 1, 3, 3], &mut r, 0.5), random_tensor(&[e], &mut r, 0.5)),
        se: random_se(e, 4, &mut r),
        project: (random_tensor(&[12, e, 1, 1], &mut r, 0.5), random_tensor(&[12], &mut r, 0.5)),
    };
    let y = mbconv_forward(&x, &spec, &w).unwrap();
    assert_eq!(y.shape(), &[12, 8, 8]);

    let (ek, eb) = w.expand.as_ref().unwrap();
    let h = tensor::conv2d(&x, ek, Some(eb), 1, Padding::Same).unwrap();
    let h = tensor::elementwise(Activation::Swish, &h);
    let h = tensor::depthwise_conv2d(&h, &w.depthwise.0, Some(&w.depthwise.1), 2, Padding::Same).unwrap();
    let h = tensor::elementwise(Activation::Swish, &h);
    let pooled = tensor::global_average_pool(&h).unwrap();
    let z = tensor::linear(&w.se.reduce_weight, &pooled, Some(&w.se.reduce_bias)).unwrap();
    let z = tensor::elementwise(Activation::Relu, &z);
    let s = tensor::linear(&w.se.expand_weight, &z, Some(&w.se.expand_bias)).unwrap();
    let s = tensor::elementwise(Activation::Sigmoid, &s);
    let h = tensor::channel_scale(&h, &s).unwrap();
    let expected = tensor::conv2d(&h, &w.project.0, Some(&w.project.1), 1, Padding::Same).unwrap();
    assert!(y.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn mbconv_rejects_channel_mismatch() {
    let spec = MbConvSpec::new(1, 3, 3, 3, 1, 1);
    let w = MbConvWeights {
        expand: None,
        depthwise: (Tensor::zeros(&[3, 1, 3, 3]), Tensor::zeros(&[3])),
        se: zero_se(3, 1),
        project: (Tensor::zeros(&[3, 3, 1, 1]), Tensor::zeros(&[3])),
    };
    assert!(matches!(
        mbconv_forward(&Tensor::zeros(&[2, 4, 4]), &spec, &w),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn default_backbone_output_is_2x2() {
    let params = init_parameters(&ModelConfig::default(), 1).unwrap();
    let mut r = rng(7);
    let frame = random_tensor(&[1, 64, 64], &mut r, 1.0).map(f64::abs);
    let out = backbone_forward(&frame, &params).unwrap();
    assert_eq!(out.shape(), &[80, 2, 2]);
}

#[test]
fn zero_frame_zero_params_gives_zero_features() {
    let config = ModelConfig::desk();
    let p = init_parameters(&config, 1).unwrap();
    let named = p.names().iter().map(|n| (n.clone(), Tensor::zeros(p.get(n).unwrap().shape()))).collect();
    let zero = ModelParams::from_tensors(config, named).unwrap();
    let out = backbone_forward(&Tensor::zeros(&[1, 32, 32]), &zero).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backbone_is_stateless_across_frames() {
    let p = init_parameters(&ModelConfig::desk(), 2).unwrap();
    let mut r = rng(8);
    let a = random_tensor(&[1, 32, 32], &mut r, 1.0);
    let b = random_tensor(&[1, 32, 32], &mut r, 1.0);
    let ab = [backbone_forward(&a, &p).unwrap(), backbone_forward(&b, &p).unwrap()];
    let ba = [backbone_forward(&b, &p).unwrap(), backbone_forward(&a, &p).unwrap()];
    assert_eq!(ab[0], ba[1]);
    assert_eq!(ab[1], ba[0]);
}

#[test]
fn backbone_rejects_wrong_frame_size() {
    let p = init_parameters(&ModelConfig::desk(), 2).unwrap();
    assert!(backbone_forward(&Tensor::zeros(&[1, 16, 16]), &p).is_err());
}

#[test]
fn convlstm_zero_weights_halve_cell() {
    let mut r = rng(9);
    let mut p = random_lstm_params(&mut r, 3, 2, 3, 1.0);
    for g in 0..4 {
        p.input_kernels[g] = Tensor::zeros(p.input_kernels[g].shape());
        p.hidden_kernels[g] = Tensor::zeros(p.hidden_kernels[g].shape());
        p.biases[g] = Tensor::zeros(&[2]);
    }
    let x = random_tensor(&[3, 4, 4], &mut r, 3.0);
    let c0 = random_tensor(&[2, 4, 4], &mut r, 3.0);
    let state = ConvLstmState { hidden: random_tensor(&[2, 4, 4], &mut r, 0.9), cell: c0.clone() };
    let next = convlstm_step(&x, &state, &p).unwrap();
    assert!(next.cell.max_abs_diff(&c0.scale(0.5)) < 1e-15);
    let expected_h = c0.map(|c| 0.5 * (0.5 * c).tanh());
    assert!(next.hidden.max_abs_diff(&expected_h) < 1e-15);
}

#[test]
fn convlstm_all_zero_stays_zero() {
    let p = ConvLstmParams {
        input_kernels: std::array::from_fn(|_| Tensor::zeros(&[2, 3, 3, 3])),
        hidden_kernels: std::array::from_fn(|_| Tensor::zeros(&[2, 2, 3, 3])),
        biases: std::array::from_fn(|_| Tensor::zeros(&[2])),
    };
    let next = convlstm_step(&Tensor::zeros(&[3, 4, 4]), &ConvLstmState::zeros(2, 4, 4), &p).unwrap();
    assert!(next.hidden.data().iter().chain(next.cell.data()).all(|&v| v == 0.0));
}

#[test]
fn convlstm_matches_scalar_oracle() {
    let mut r = rng(10);
    for _ in 0..10 {
        let p = random_lstm_params(&mut r, 4, 3, 3, 0.8);
        let x = random_tensor(&[4, 5, 5], &mut r, 1.0);
        let state = ConvLstmState {
            hidden: random_tensor(&[3, 5, 5], &mut r, 0.9),
            cell: random_tensor(&[3, 5, 5], &mut r, 2.0),
        };
        let next = convlstm_step(&x, &state, &p).unwrap();
        let (h, c, _) = scalar_convlstm(&x, &state.hidden, &state.cell, &p);
        assert!(next.hidden.max_abs_diff(&h) < 1e-12);
        assert!(next.cell.max_abs_diff(&c) < 1e-12);
    }
}

#[test]
fn convlstm_rejects_spatial_mismatch() {
    let mut r = rng(11);
    let p = random_lstm_params(&mut r, 2, 2, 3, 1.0);
    let err = convlstm_step(&Tensor::zeros(&[2, 4, 4]), &ConvLstmState::zeros(2, 5, 5), &p);
    assert!(matches!(err, Err(ModelError::Tensor(_))));
}

/// Sum of weighted H after three chained steps; the weights make the loss
/// sensitive to every output element.
fn chained_loss<G: Graph>(g: &mut G, xs: &[Tensor], p: &ConvLstmParams, readout: &Tensor) -> G::Value {
    let mut id = 0;
    let w = p.map(&mut |t| {
        id += 1;
        g.param(ParamId(id - 1), t)
    });
    let hidden = p.hidden_channels();
    let (h, wd) = (xs[0].shape()[1], xs[0].shape()[2]);
    let mut hs = g.constant(Tensor::zeros(&[hidden, h, wd]));
    let mut cs = g.constant(Tensor::zeros(&[hidden, h, wd]));
    for x in xs {
        let xv = g.constant(x.clone());
        (hs, cs) = convlstm_cell(g, &xv, &hs, &cs, &w).unwrap();
    }
    let weighted = g.mask(&hs, readout).unwrap();
    g.sum(&weighted).unwrap()
}

#[test]
fn convlstm_gradients_through_three_steps() {
    let mut r = rng(12);
    let p = random_lstm_params(&mut r, 2, 2, 3, 0.6);
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 4, 4], &mut r, 1.0)).collect();
    let readout = random_tensor(&[2, 4, 4], &mut r, 1.0);
    let mut tape = Tape::new();
    let loss = chained_loss(&mut tape, &xs, &p, &readout);
    let grads = tape.backward(loss).unwrap();

    let flat: Vec<Tensor> = {
        let mut v = Vec::new();
        p.map(&mut |t| v.push(t.clone()));
        v
    };
    for (pi, base) in flat.iter().enumerate() {
        let numeric = central_differences(base, 1e-6, |probe| {
            let mut i = 0;
            let perturbed = p.map(&mut |t| {
                i += 1;
                if i - 1 == pi { probe.clone() } else { t.clone() }
            });
            chained_loss(&mut Eager, &xs, &perturbed, &readout).item()
        });
        let analytic = grads.get(ParamId(pi)).unwrap();
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-4, "param {pi}: {a} vs {n}");
        }
    }
}

#[test]
fn classify_outputs_probability_vector() {
    let p = init_parameters(&ModelConfig::desk(), 3).unwrap();
    let mut r = rng(13);
    let frames: Vec<Tensor> = (0..4).map(|_| random_tensor(&[1, 32, 32], &mut r, 1.0).map(f64::abs)).collect();
    let probs = classify_sequence(&frames, &p).unwrap();
    assert_eq!(probs.len(), 12);
    assert!(probs.data().iter().all(|&v| v > 0.0));
    assert!((probs.sum() - 1.0).abs() < 1e-9);
    let logits = classify_logits(&frames, &p).unwrap();
    assert_eq!(logits.argmax(), probs.argmax());
}

#[test]
fn classify_is_order_sensitive() {
    let p = init_parameters(&ModelConfig::desk(), 4).unwrap();
    let mut r = rng(14);
    let frames: Vec<Tensor> = (0..3).map(|_| random_tensor(&[1, 32, 32], &mut r, 1.0).map(f64::abs)).collect();
    let base = classify_sequence(&frames, &p).unwrap();
    let mut dup = frames.clone();
    dup.push(frames[2].clone());
    assert!(classify_sequence(&dup, &p).unwrap().max_abs_diff(&base) > 1e-12);
    let rev: Vec<Tensor> = frames.iter().rev().cloned().collect();
    assert!(classify_sequence(&rev, &p).unwrap().max_abs_diff(&base) > 1e-12);
}

#[test]
fn classify_rejects_empty_sequence() {
    let p = init_parameters(&ModelConfig::desk(), 4).unwrap();
    assert!(matches!(classify_sequence(&[], &p), Err(ModelError::Contract(_))));
}

#[test]
fn single_frame_equals_manual_composition() {
    let p = init_parameters(&ModelConfig::desk(), 5).unwrap();
    let mut r = rng(15);
    let frame = random_tensor(&[1, 32, 32], &mut r, 1.0).map(f64::abs);
    let features = backbone_forward(&frame, &p).unwrap();
    let side = p.config().feature_grid();
    let state = convlstm_step(&features, &ConvLstmState::zeros(8, side, side), &p.lstm_params()).unwrap();
    let pooled = tensor::global_average_pool(&state.hidden).unwrap();
    let logits = tensor::linear(p.get("head.weight").unwrap(), &pooled, p.get("head.bias")).unwrap();
    let expected = tensor::softmax(&logits);
    let got = classify_sequence(&[frame], &p).unwrap();
    assert!(got.max_abs_diff(&expected) < 1e-15);
}

#[test]
fn forget_gate_with_unit_bias_is_sigmoid_one() {
    // sigma(1) = 1 / (1 + e^-1)
    let expected = 0.731_058_578_630_004_9;
    assert!((scalar_sigmoid(1.0) - expected).abs() < 1e-15);
    let p = init_parameters(&ModelConfig::gradient_check(), 6).unwrap();
    let mut lstm = p.lstm_params();
    for g in 0..4 {
        lstm.input_kernels[g] = Tensor::zeros(lstm.input_kernels[g].shape());
        lstm.hidden_kernels[g] = Tensor::zeros(lstm.hidden_kernels[g].shape());
    }
    let mut r = rng(16);
    let x = random_tensor(&[2, 2, 2], &mut r, 1.0);
    let state = ConvLstmState { hidden: Tensor::zeros(&[2, 2, 2]), cell: Tensor::ones(&[2, 2, 2]) };
    let next = convlstm_step(&x, &state, &lstm).unwrap();
    // candidate is tanh(0) = 0, so C_1 = f * C_0 = f
    assert!(next.cell.data().iter().all(|&c| (c - 0.731_058_578_63).abs() < 1e-11));
}

#[test]
fn inference_is_deterministic() {
    let p = init_parameters(&ModelConfig::desk(), 9).unwrap();
    let mut r = rng(17);
    let frames: Vec<Tensor> = (0..3).map(|_| random_tensor(&[1, 32, 32], &mut r, 1.0)).collect();
    let a = classify_sequence(&frames, &p).unwrap();
    let b = classify_sequence(&frames, &p).unwrap();
    assert_eq!(a.data(), b.data());
}
