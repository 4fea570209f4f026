use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
    Rmsprop,
    Adagrad,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            "rmsprop" => Ok(Self::Rmsprop),
            "adagrad" => Ok(Self::Adagrad),
            _ => Err(format!("unknown optimizer '{s}' (adam | sgd | rmsprop | adagrad)")),
        }
    }
}

/// Step hyperparameters shared by every optimizer kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decay of the squared-gradient average (RMSprop).
    pub rho: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rho: 0.9,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Tensor,
    pub v: Tensor,
}

impl MomentState {
    pub fn zeros_like(t: &Tensor) -> Self {
        Self {
            m: Tensor::zeros(t.shape()),
            v: Tensor::zeros(t.shape()),
        }
    }
}

fn check_shapes(param: &Tensor, grad: &Tensor, state: &MomentState) -> Result<(), TrainError> {
    if grad.shape() != param.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape() {
        return Err(TrainError::Contract(format!(
            "optimizer shapes disagree: param {:?}, grad {:?}, moments {:?}/{:?}",
            param.shape(),
            grad.shape(),
            state.m.shape(),
            state.v.shape()
        )));
    }
    Ok(())
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut MomentState,
    t: u64,
    cfg: &OptimizerConfig,
) -> Result<(), TrainError> {
    check_shapes(param, grad, state)?;
    if t == 0 {
        return Err(TrainError::Contract("Adam step index starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let p = param.data_mut();
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, &g) in grad.data().iter().enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// One update of any kind. SGD ignores the moments; RMSprop keeps its running
/// square in `v`; Adagrad accumulates squares in `v`.
pub fn optimizer_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut MomentState,
    t: u64,
    cfg: &OptimizerConfig,
) -> Result<(), TrainError> {
    if cfg.kind == OptimizerKind::Adam {
        return adam_step(param, grad, state, t, cfg);
    }
    check_shapes(param, grad, state)?;
    let lr = cfg.learning_rate;
    let p = param.data_mut();
    let v = state.v.data_mut();
    match cfg.kind {
        OptimizerKind::Adam => unreachable!(),
        OptimizerKind::Sgd => {
            for (pi, &g) in p.iter_mut().zip(grad.data()) {
                *pi -= lr * g;
            }
        }
        OptimizerKind::Rmsprop => {
            for ((pi, vi), &g) in p.iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                *vi = cfg.rho * *vi + (1.0 - cfg.rho) * g * g;
                *pi -= lr * g / (vi.sqrt() + cfg.epsilon);
            }
        }
        OptimizerKind::Adagrad => {
            for ((pi, vi), &g) in p.iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                *vi += g * g;
                *pi -= lr * g / (vi.sqrt() + cfg.epsilon);
            }
        }
    }
    Ok(())
}

/// Optimizer state for a whole parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step: u64,
    pub state: Vec<MomentState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            state: params.iter().map(MomentState::zeros_like).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TrainError> {
        if params.len() != self.state.len() || grads.len() != params.len() {
            return Err(TrainError::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} gradients",
                self.state.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.state) {
            optimizer_step(p, g, s, self.step, &self.config)?;
        }
        Ok(())
    }
}
