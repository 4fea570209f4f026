use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that the output extent is `ceil(size / stride)`; the odd
    /// extra pixel goes to the bottom/right.
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial axis.
pub fn output_extent(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(TensorError::Contract("stride must be at least 1".into()));
    }
    match padding {
        Padding::Valid => {
            if size < kernel {
                return Err(TensorError::Dimension {
                    op: "conv",
                    axis: "spatial extent smaller than kernel",
                    expected: kernel,
                    found: size,
                });
            }
            Ok(((size - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = size.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let pad_total = needed.saturating_sub(size);
            Ok((out, pad_total / 2))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
    stride: usize,
}

impl ConvGeometry {
    fn new(
        op: &'static str,
        input: &Tensor,
        kernel: &Tensor,
        stride: usize,
        padding: Padding,
        depthwise: bool,
    ) -> Result<Self> {
        let (c_in, h, w) = input.chw(op)?;
        kernel.expect_rank(4, op)?;
        let ks = kernel.shape();
        let (c_out, k_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if depthwise {
            if k_in != 1 {
                return Err(TensorError::Dimension {
                    op,
                    axis: "kernel input channels (depthwise)",
                    expected: 1,
                    found: k_in,
                });
            }
            if c_out != c_in {
                return Err(TensorError::Dimension {
                    op,
                    axis: "channels (input vs kernel)",
                    expected: c_in,
                    found: c_out,
                });
            }
        } else if k_in != c_in {
            return Err(TensorError::Dimension {
                op,
                axis: "input channels (input vs kernel)",
                expected: c_in,
                found: k_in,
            });
        }
        let (oh, pad_t) = output_extent(h, kh, stride, padding)?;
        let (ow, pad_l) = output_extent(w, kw, stride, padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
            pad_t,
            pad_l,
            stride,
        })
    }

    /// Output positions along one axis whose input index `o*stride + k - pad` lies in `[0, size)`.
    fn valid_range(out: usize, k: usize, pad: usize, stride: usize, size: usize) -> (usize, usize) {
        // first o with o*stride + k >= pad
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        // last o with o*stride + k - pad <= size - 1
        let limit = size + pad;
        let hi = if k >= limit { 0 } else { ((limit - 1 - k) / stride + 1).min(out) };
        (lo.min(hi), hi)
    }

    fn check_bias(&self, op: &'static str, bias: Option<&Tensor>) -> Result<()> {
        if let Some(b) = bias {
            if b.len() != self.c_out {
                return Err(TensorError::Dimension {
                    op,
                    axis: "bias length",
                    expected: self.c_out,
                    found: b.len(),
                });
            }
        }
        Ok(())
    }

    fn check_grad(&self, op: &'static str, grad: &Tensor) -> Result<()> {
        let expected = [self.c_out, self.oh, self.ow];
        if grad.shape() != expected {
            return Err(TensorError::Contract(format!(
                "{op}: upstream gradient shape {:?} != output shape {expected:?}",
                grad.shape()
            )));
        }
        Ok(())
    }
}

/// 2-D cross-correlation (the deep-learning "convolution").
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::new("conv2d", input, kernel, stride, padding, false)?;
    g.check_bias("conv2d", bias)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    let plane = g.oh * g.ow;
    for co in 0..g.c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            dst.fill(b.data()[co]);
        }
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = ConvGeometry::valid_range(g.oh, ky, g.pad_t, g.stride, g.h);
                for kx in 0..g.kw {
                    let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = ConvGeometry::valid_range(g.ow, kx, g.pad_l, g.stride, g.w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_t;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad_l;
                            let n = ox1 - ox0;
                            for (d, s) in drow[ox0..ox1].iter_mut().zip(&row[ix0..ix0 + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                drow[ox] += wv * row[ox * g.stride + kx - g.pad_l];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Straight six-loop convolution with explicit bounds checks. Slow; kept as
/// the reference the fast path is validated against.
pub fn conv2d_reference(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::new("conv2d", input, kernel, stride, padding, false)?;
    g.check_bias("conv2d", bias)?;
    let mut out = Tensor::zeros(&[g.c_out, g.oh, g.ow]);
    for co in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                for ci in 0..g.c_in {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let iy = (oy * g.stride + ky) as isize - g.pad_t as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad_l as isize;
                            if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            acc += input.data()[(ci * g.h + iy) * g.w + ix]
                                * kernel.data()[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
                out.data_mut()[(co * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` with respect to (input, kernel, bias).
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new("conv2d_backward", input, kernel, stride, padding, false)?;
    g.check_grad("conv2d_backward", grad_out)?;
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    let plane = g.oh * g.ow;
    for co in 0..g.c_out {
        let gplane = &go[co * plane..(co + 1) * plane];
        gb[co] = gplane.iter().sum();
        for ci in 0..g.c_in {
            let xoff = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (oy0, oy1) = ConvGeometry::valid_range(g.oh, ky, g.pad_t, g.stride, g.h);
                for kx in 0..g.kw {
                    let kidx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = k[kidx];
                    let (ox0, ox1) = ConvGeometry::valid_range(g.ow, kx, g.pad_l, g.stride, g.w);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_t;
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        let rbase = xoff + iy * g.w;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.pad_l;
                            let gv = grow[ox];
                            acc += gv * x[rbase + ix];
                            gx[rbase + ix] += gv * wv;
                        }
                    }
                    gk[kidx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![g.c_out], gb)?,
    ))
}

/// Per-channel convolution: kernel `[C, 1, kh, kw]`, output channel `c` only
/// sees input channel `c`.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::new("depthwise_conv2d", input, kernel, stride, padding, true)?;
    g.check_bias("depthwise_conv2d", bias)?;
    let x = input.data();
    let k = kernel.data();
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.c_out * plane];
    for c in 0..g.c_out {
        let dst = &mut out[c * plane..(c + 1) * plane];
        if let Some(b) = bias {
            dst.fill(b.data()[c]);
        }
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = ConvGeometry::valid_range(g.oh, ky, g.pad_t, g.stride, g.h);
            for kx in 0..g.kw {
                let wv = k[(c * g.kh + ky) * g.kw + kx];
                let (ox0, ox1) = ConvGeometry::valid_range(g.ow, kx, g.pad_l, g.stride, g.w);
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    for ox in ox0..ox1 {
                        dst[oy * g.ow + ox] += wv * src[iy * g.w + ox * g.stride + kx - g.pad_l];
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new("depthwise_conv2d_backward", input, kernel, stride, padding, true)?;
    g.check_grad("depthwise_conv2d_backward", grad_out)?;
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    let plane = g.oh * g.ow;
    for c in 0..g.c_out {
        let gplane = &go[c * plane..(c + 1) * plane];
        gb[c] = gplane.iter().sum();
        let xoff = c * g.h * g.w;
        for ky in 0..g.kh {
            let (oy0, oy1) = ConvGeometry::valid_range(g.oh, ky, g.pad_t, g.stride, g.h);
            for kx in 0..g.kw {
                let kidx = (c * g.kh + ky) * g.kw + kx;
                let wv = k[kidx];
                let (ox0, ox1) = ConvGeometry::valid_range(g.ow, kx, g.pad_l, g.stride, g.w);
                let mut acc = 0.0;
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    for ox in ox0..ox1 {
                        let xi = xoff + iy * g.w + ox * g.stride + kx - g.pad_l;
                        let gv = gplane[oy * g.ow + ox];
                        acc += gv * x[xi];
                        gx[xi] += gv * wv;
                    }
                }
                gk[kidx] += acc;
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![g.c_out], gb)?,
    ))
}

/// `[C, H, W] -> [C]`, per-channel spatial mean.
pub fn global_average_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw("global_average_pool")?;
    let plane = h * w;
    let data = input
        .data()
        .chunks_exact(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![c], data)
}

pub fn global_average_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    if grad_out.len() != c {
        return Err(TensorError::Dimension {
            op: "global_average_pool_backward",
            axis: "channels",
            expected: c,
            found: grad_out.len(),
        });
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::new(input_shape.to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Swish,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Swish => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// d/dx evaluated at input `x`, given `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn elementwise(op: Activation, input: &Tensor) -> Tensor {
    input.map(|v| op.apply(v))
}

pub fn elementwise_backward(
    op: Activation,
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
) -> Result<Tensor> {
    input.expect_same_shape(grad_out, "elementwise_backward")?;
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * op.derivative(x, y))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Softmax over all entries, computed after subtracting the maximum.
pub fn softmax(input: &Tensor) -> Tensor {
    let max = input.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor {
        shape: input.shape().to_vec(),
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.expect_same_shape(grad_out, "softmax_backward")?;
    let dot: f64 = output.data().iter().zip(grad_out.data()).map(|(y, g)| y * g).sum();
    output.zip_map(grad_out, "softmax_backward", |y, g| y * (g - dot))
}

/// Affine map `weight[out, in] · x + bias`. `x` is read flat.
pub fn linear(weight: &Tensor, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    weight.expect_rank(2, "linear")?;
    let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != cols {
        return Err(TensorError::Dimension {
            op: "linear",
            axis: "input features",
            expected: cols,
            found: x.len(),
        });
    }
    if let Some(b) = bias {
        if b.len() != rows {
            return Err(TensorError::Dimension {
                op: "linear",
                axis: "bias length",
                expected: rows,
                found: b.len(),
            });
        }
    }
    let data = weight
        .data()
        .chunks_exact(cols)
        .enumerate()
        .map(|(r, row)| {
            let dot: f64 = row.iter().zip(x.data()).map(|(w, v)| w * v).sum();
            dot + bias.map_or(0.0, |b| b.data()[r])
        })
        .collect();
    Tensor::new(vec![rows], data)
}

/// Gradients of `linear` with respect to (weight, x, bias).
pub fn linear_backward(
    weight: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
    if grad_out.len() != rows {
        return Err(TensorError::Dimension {
            op: "linear_backward",
            axis: "output features",
            expected: rows,
            found: grad_out.len(),
        });
    }
    let mut gw = vec![0.0; rows * cols];
    let mut gx = vec![0.0; cols];
    for (r, &g) in grad_out.data().iter().enumerate() {
        let wrow = &weight.data()[r * cols..(r + 1) * cols];
        let grow = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] = g * x.data()[c];
            gx[c] += g * wrow[c];
        }
    }
    Ok((
        Tensor::new(vec![rows, cols], gw)?,
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![rows], grad_out.data().to_vec())?,
    ))
}

/// `out[c, h, w] = x[c, h, w] * s[c]`.
pub fn channel_scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw("channel_scale")?;
    if s.len() != c {
        return Err(TensorError::Dimension {
            op: "channel_scale",
            axis: "channels",
            expected: c,
            found: s.len(),
        });
    }
    let plane = h * w;
    let mut data = x.data().to_vec();
    for (ch, &sv) in data.chunks_exact_mut(plane).zip(s.data()) {
        ch.iter_mut().for_each(|v| *v *= sv);
    }
    Tensor::new(x.shape().to_vec(), data)
}

pub fn channel_scale_backward(x: &Tensor, s: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let gx = channel_scale(grad_out, s)?;
    let (_, h, w) = x.chw("channel_scale_backward")?;
    let plane = h * w;
    let gs = x
        .data()
        .chunks_exact(plane)
        .zip(grad_out.data().chunks_exact(plane))
        .map(|(xc, gc)| xc.iter().zip(gc).map(|(a, b)| a * b).sum())
        .collect();
    Ok((gx, Tensor::new(s.shape().to_vec(), gs)?))
}
