//! Independent reference implementations used as test oracles. Nothing here
//! calls the library's kernels; values are computed with plain scalar loops.

#![allow(dead_code)]

use mrha_core::model::ConvLstmParams;
use mrha_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

pub fn scalar_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sum_ci sum_ky sum_kx k[o,ci,ky,kx] * x[ci, y+ky-p, x+kx-p]`, zero outside,
/// stride 1, symmetric padding `p = (k-1)/2`.
pub fn scalar_same_conv_at(x: &Tensor, k: &Tensor, o: usize, y: usize, xx: usize) -> f64 {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (k.shape()[2], k.shape()[3]);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut s = 0.0;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let iy = y as isize + ky as isize - ph as isize;
                let ix = xx as isize + kx as isize - pw as isize;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                s += k.data()[((o * c + ci) * kh + ky) * kw + kx] * x.data()[(ci * h + iy as usize) * w + ix as usize];
            }
        }
    }
    s
}

/// Per-pixel ConvLSTM step written directly from the gate equations.
/// Returns `(H_t, C_t)` plus the three gate maps `(f, i, o)` for range checks.
pub fn scalar_convlstm(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    p: &ConvLstmParams,
) -> (Tensor, Tensor, [Tensor; 3]) {
    let hidden = p.hidden_kernels[0].shape()[0];
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let n = hidden * h * w;
    let (mut hn, mut cn) = (vec![0.0; n], vec![0.0; n]);
    let (mut fg, mut ig, mut og) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for o in 0..hidden {
        for y in 0..h {
            for xx in 0..w {
                let pre = |g: usize| {
                    scalar_same_conv_at(x, &p.input_kernels[g], o, y, xx)
                        + scalar_same_conv_at(h_prev, &p.hidden_kernels[g], o, y, xx)
                        + p.biases[g].data()[o]
                };
                let f = scalar_sigmoid(pre(0));
                let i = scalar_sigmoid(pre(1));
                let cand = pre(2).tanh();
                let out = scalar_sigmoid(pre(3));
                let idx = (o * h + y) * w + xx;
                let c = f * c_prev.data()[idx] + i * cand;
                cn[idx] = c;
                hn[idx] = out * c.tanh();
                fg[idx] = f;
                ig[idx] = i;
                og[idx] = out;
            }
        }
    }
    let shape = vec![hidden, h, w];
    let t = |v: Vec<f64>| Tensor::new(shape.clone(), v).unwrap();
    (t(hn), t(cn), [t(fg), t(ig), t(og)])
}

pub fn random_lstm_params(rng: &mut ChaCha8Rng, in_ch: usize, hidden: usize, k: usize, scale: f64) -> ConvLstmParams {
    let mut kx = || random_tensor(&[hidden, in_ch, k, k], rng, scale);
    let input_kernels = [kx(), kx(), kx(), kx()];
    let mut kh = || random_tensor(&[hidden, hidden, k, k], rng, scale);
    let hidden_kernels = [kh(), kh(), kh(), kh()];
    let mut b = || random_tensor(&[hidden], rng, scale);
    let biases = [b(), b(), b(), b()];
    ConvLstmParams { input_kernels, hidden_kernels, biases }
}

/// Central-difference derivative of `f` with respect to every entry of `x`.
pub fn central_differences(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[j] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[j] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Index of the nearest timestamp to `target` by exhaustive search, earliest on ties.
pub fn argmin_nearest(timestamps: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, &t) in timestamps.iter().enumerate() {
        if (t - target).abs() < (timestamps[best] - target).abs() - 1e-9 {
            best = i;
        }
    }
    best
}

/// Joint coordinates over all frames, relative to the first frame's spine
/// base and divided by its head-to-foot height, flattened.
pub fn trajectory(seq: &mrha_core::skeleton::SkeletonSequence) -> Vec<f64> {
    let first = &seq.frames[0].joints;
    let origin = first[0];
    let height = first[3][1] - 0.5 * (first[15][1] + first[19][1]);
    seq.frames
        .iter()
        .flat_map(|f| f.joints.iter().flat_map(move |p| (0..3).map(move |a| (p[a] - origin[a]) / height)))
        .collect()
}

/// 1-nearest-neighbour accuracy with squared Euclidean distance between trajectories.
pub fn one_nn_accuracy(
    train: &[mrha_core::skeleton::SkeletonSequence],
    test: &[mrha_core::skeleton::SkeletonSequence],
) -> f64 {
    let train_feats: Vec<Vec<f64>> = train.iter().map(trajectory).collect();
    let mut correct = 0;
    for s in test {
        let q = trajectory(s);
        let mut best = (f64::INFINITY, None);
        for (feat, t) in train_feats.iter().zip(train) {
            if feat.len() != q.len() {
                continue;
            }
            let d: f64 = feat.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, t.label);
            }
        }
        if best.1 == s.label {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}
