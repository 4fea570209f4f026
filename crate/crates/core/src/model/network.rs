use super::params::{ConvLstmParams, ConvLstmWeights, MbConvWeights, ModelParams, ModelWeights, SeWeights};
use super::{MbConvSpec, ModelConfig, ModelError};
use crate::autodiff::{Eager, Graph};
use crate::tensor::{Activation, Padding, Tensor};

type Result<T> = std::result::Result<T, ModelError>;

/// Hidden and cell maps carried between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl ConvLstmState {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[channels, height, width]),
            cell: Tensor::zeros(&[channels, height, width]),
        }
    }
}

/// Channel recalibration: `x * sigmoid(W2 relu(W1 gap(x) + b1) + b2)`.
pub fn se_block<G: Graph>(g: &mut G, x: &G::Value, w: &SeWeights<G::Value>) -> Result<G::Value> {
    let pooled = g.global_average_pool(x)?;
    let squeezed = g.linear(&w.reduce_weight, &pooled, Some(&w.reduce_bias))?;
    let squeezed = g.activation(Activation::Relu, &squeezed)?;
    let excited = g.linear(&w.expand_weight, &squeezed, Some(&w.expand_bias))?;
    let scale = g.sigmoid(&excited)?;
    Ok(g.channel_scale(x, &scale)?)
}

pub fn mbconv_block<G: Graph>(
    g: &mut G,
    x: &G::Value,
    spec: &MbConvSpec,
    w: &MbConvWeights<G::Value>,
) -> Result<G::Value> {
    let channels = g.tensor(x).shape()[0];
    if channels != spec.in_channels {
        return Err(ModelError::Config(format!(
            "MBConv expects {} input channels, got {channels}",
            spec.in_channels
        )));
    }
    let mut h = x.clone();
    if let Some((k, b)) = &w.expand {
        h = g.conv2d(&h, k, Some(b), 1, Padding::Same)?;
        h = g.activation(Activation::Swish, &h)?;
    }
    h = g.depthwise_conv2d(&h, &w.depthwise.0, Some(&w.depthwise.1), spec.stride, Padding::Same)?;
    h = g.activation(Activation::Swish, &h)?;
    h = se_block(g, &h, &w.se)?;
    h = g.conv2d(&h, &w.project.0, Some(&w.project.1), 1, Padding::Same)?;
    if spec.has_residual {
        h = g.add(&h, x)?;
    }
    Ok(h)
}

pub fn backbone<G: Graph>(
    g: &mut G,
    frame: &G::Value,
    config: &ModelConfig,
    w: &ModelWeights<G::Value>,
) -> Result<G::Value> {
    let shape = g.tensor(frame).shape().to_vec();
    let grid = config.input_grid;
    if shape != [1, grid, grid] {
        return Err(ModelError::Contract(format!(
            "frame must be [1, {grid}, {grid}], got {shape:?}"
        )));
    }
    let mut h = g.conv2d(frame, &w.stem.0, Some(&w.stem.1), 2, Padding::Same)?;
    h = g.activation(Activation::Swish, &h)?;
    for (spec, sw) in config.stage_specs.iter().zip(&w.stages) {
        h = mbconv_block(g, &h, spec, sw)?;
    }
    Ok(h)
}

/// One ConvLSTM step, returning `(H_t, C_t)`:
///
/// ```text
/// f = σ(Wxf*X + Whf*H + bf)      i = σ(Wxi*X + Whi*H + bi)
/// C' = f⊙C + i⊙tanh(Wxc*X + Whc*H + bc)
/// o = σ(Wxo*X + Who*H + bo)      H' = o⊙tanh(C')
/// ```
///
/// All gate convolutions use "same" padding.
pub fn convlstm_cell<G: Graph>(
    g: &mut G,
    x: &G::Value,
    hidden: &G::Value,
    cell: &G::Value,
    w: &ConvLstmWeights<G::Value>,
) -> Result<(G::Value, G::Value)> {
    let (xs, hs) = (g.tensor(x).shape().to_vec(), g.tensor(hidden).shape().to_vec());
    if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Dimension {
            op: "convlstm_step",
            axis: "spatial extent (input vs state)",
            expected: hs.get(1).copied().unwrap_or(0),
            found: xs.get(1).copied().unwrap_or(0),
        }));
    }
    let mut pre = Vec::with_capacity(4);
    for gate in 0..4 {
        let from_x = g.conv2d(x, &w.input_kernels[gate], Some(&w.biases[gate]), 1, Padding::Same)?;
        let from_h = g.conv2d(hidden, &w.hidden_kernels[gate], None, 1, Padding::Same)?;
        pre.push(g.add(&from_x, &from_h)?);
    }
    let forget = g.sigmoid(&pre[0])?;
    let input = g.sigmoid(&pre[1])?;
    let candidate = g.tanh(&pre[2])?;
    let output = g.sigmoid(&pre[3])?;
    let kept = g.mul(&forget, cell)?;
    let written = g.mul(&input, &candidate)?;
    let new_cell = g.add(&kept, &written)?;
    let squashed = g.tanh(&new_cell)?;
    let new_hidden = g.mul(&output, &squashed)?;
    Ok((new_hidden, new_cell))
}

/// Class logits for a frame sequence: backbone per frame, ConvLSTM scan from a
/// zero state, GAP of the final hidden map, dense head. `dropout_mask`, when
/// given, multiplies the logits (training only).
pub fn sequence_logits<G: Graph>(
    g: &mut G,
    frames: &[G::Value],
    config: &ModelConfig,
    w: &ModelWeights<G::Value>,
    dropout_mask: Option<&Tensor>,
) -> Result<G::Value> {
    if frames.is_empty() {
        return Err(ModelError::Contract("cannot classify an empty sequence".into()));
    }
    let side = config.feature_grid();
    let zeros = Tensor::zeros(&[config.hidden_channels, side, side]);
    let mut hidden = g.constant(zeros.clone());
    let mut cell = g.constant(zeros);
    for frame in frames {
        let features = backbone(g, frame, config, w)?;
        (hidden, cell) = convlstm_cell(g, &features, &hidden, &cell, &w.lstm)?;
    }
    let pooled = g.global_average_pool(&hidden)?;
    let mut logits = g.linear(&w.head.0, &pooled, Some(&w.head.1))?;
    if let Some(mask) = dropout_mask {
        logits = g.mask(&logits, mask)?;
    }
    Ok(logits)
}

pub fn se_recalibrate(features: &Tensor, params: &SeWeights<Tensor>) -> Result<Tensor> {
    let channels = features.shape().first().copied().unwrap_or(0);
    if params.reduce_weight.rank() != 2 || params.reduce_weight.shape()[1] != channels {
        return Err(ModelError::Config(format!(
            "SE squeeze weight {:?} does not match {channels} channels",
            params.reduce_weight.shape()
        )));
    }
    let squeezed = params.reduce_weight.shape()[0];
    if squeezed == 0 || channels % squeezed != 0 {
        return Err(ModelError::Config(format!(
            "SE reduction to {squeezed} does not divide {channels} channels"
        )));
    }
    se_block(&mut Eager, features, params)
}

pub fn mbconv_forward(x: &Tensor, spec: &MbConvSpec, params: &MbConvWeights<Tensor>) -> Result<Tensor> {
    spec.validate()?;
    mbconv_block(&mut Eager, x, spec, params)
}

pub fn backbone_forward(frame: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let w = params.weights();
    backbone(&mut Eager, frame, params.config(), &w)
}

pub fn convlstm_step(x: &Tensor, state: &ConvLstmState, params: &ConvLstmParams) -> Result<ConvLstmState> {
    params.validate()?;
    if state.hidden.shape() != state.cell.shape() {
        return Err(ModelError::Contract(format!(
            "hidden {:?} and cell {:?} shapes differ",
            state.hidden.shape(),
            state.cell.shape()
        )));
    }
    let (hidden, cell) = convlstm_cell(&mut Eager, x, &state.hidden, &state.cell, params)?;
    Ok(ConvLstmState { hidden, cell })
}

/// Logits for a sequence in inference mode (no dropout).
pub fn classify_logits(frames: &[Tensor], params: &ModelParams) -> Result<Tensor> {
    let w = params.weights();
    sequence_logits(&mut Eager, frames, params.config(), &w, None)
}

/// Class posterior for a sequence in inference mode.
pub fn classify_sequence(frames: &[Tensor], params: &ModelParams) -> Result<Tensor> {
    Ok(crate::tensor::softmax(&classify_logits(frames, params)?))
}
