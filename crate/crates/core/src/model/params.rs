//! Parameter containers. Every weight struct is generic over the stored value
//! so the same layout describes specs, tensors, tape handles and ids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MbConvSpec, ModelConfig, ModelError};
use crate::autodiff::{Graph, ParamId};
use crate::tensor::Tensor;

/// Gate order used for every per-gate array: forget, input, candidate, output.
pub const GATES: [&str; 4] = ["f", "i", "c", "o"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeWeights<V> {
    pub reduce_weight: V,
    pub reduce_bias: V,
    pub expand_weight: V,
    pub expand_bias: V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbConvWeights<V> {
    /// Absent when the expansion ratio is 1.
    pub expand: Option<(V, V)>,
    pub depthwise: (V, V),
    pub se: SeWeights<V>,
    pub project: (V, V),
}

/// ConvLSTM kernels and biases, indexed in [`GATES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmWeights<V> {
    pub input_kernels: [V; 4],
    pub hidden_kernels: [V; 4],
    pub biases: [V; 4],
}

pub type ConvLstmParams = ConvLstmWeights<Tensor>;

impl ConvLstmParams {
    pub fn hidden_channels(&self) -> usize {
        self.hidden_kernels[0].shape()[0]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let hidden = self.hidden_channels();
        let kshape = self.input_kernels[0].shape();
        for g in 0..4 {
            let kx = self.input_kernels[g].shape();
            let kh = self.hidden_kernels[g].shape();
            if kx.len() != 4 || kh.len() != 4 {
                return Err(ModelError::Config("ConvLSTM kernels must be rank 4".into()));
            }
            if kx[0] != hidden || kh[0] != hidden || kh[1] != hidden {
                return Err(ModelError::Config(format!(
                    "gate {}: kernels must map to/from {hidden} hidden channels",
                    GATES[g]
                )));
            }
            if kx[2..] != kshape[2..] || kh[2..] != kshape[2..] {
                return Err(ModelError::Config("ConvLSTM kernels must share spatial size".into()));
            }
            if self.biases[g].len() != hidden {
                return Err(ModelError::Config(format!("gate {} bias length", GATES[g])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<V> {
    pub stem: (V, V),
    pub stages: Vec<MbConvWeights<V>>,
    pub lstm: ConvLstmWeights<V>,
    pub head: (V, V),
}

fn map_pair<V, U>((a, b): &(V, V), f: &mut impl FnMut(&V) -> U) -> (U, U) {
    (f(a), f(b))
}

impl<V> SeWeights<V> {
    pub fn map<U>(&self, f: &mut impl FnMut(&V) -> U) -> SeWeights<U> {
        SeWeights {
            reduce_weight: f(&self.reduce_weight),
            reduce_bias: f(&self.reduce_bias),
            expand_weight: f(&self.expand_weight),
            expand_bias: f(&self.expand_bias),
        }
    }
}

impl<V> MbConvWeights<V> {
    pub fn map<U>(&self, f: &mut impl FnMut(&V) -> U) -> MbConvWeights<U> {
        MbConvWeights {
            expand: self.expand.as_ref().map(|p| map_pair(p, f)),
            depthwise: map_pair(&self.depthwise, f),
            se: self.se.map(f),
            project: map_pair(&self.project, f),
        }
    }
}

impl<V> ConvLstmWeights<V> {
    pub fn map<U>(&self, f: &mut impl FnMut(&V) -> U) -> ConvLstmWeights<U> {
        let mut gates = |arr: &[V; 4]| -> [U; 4] {
            [f(&arr[0]), f(&arr[1]), f(&arr[2]), f(&arr[3])]
        };
        let input_kernels = gates(&self.input_kernels);
        let hidden_kernels = gates(&self.hidden_kernels);
        let biases = gates(&self.biases);
        ConvLstmWeights { input_kernels, hidden_kernels, biases }
    }
}

impl<V> ModelWeights<V> {
    /// Visits every value in canonical parameter order.
    pub fn map<U>(&self, f: &mut impl FnMut(&V) -> U) -> ModelWeights<U> {
        let stem = map_pair(&self.stem, f);
        let stages = self.stages.iter().map(|s| s.map(f)).collect();
        let lstm = self.lstm.map(f);
        let head = map_pair(&self.head, f);
        ModelWeights { stem, stages, lstm, head }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum InitRule {
    /// Uniform on `±sqrt(6 / fan_in)`.
    FanIn(usize),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitRule,
}

fn spec(name: String, shape: Vec<usize>, init: InitRule) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn kernel(name: String, shape: [usize; 4]) -> ParamSpec {
    let fan_in = shape[1] * shape[2] * shape[3];
    spec(name, shape.to_vec(), InitRule::FanIn(fan_in))
}

fn zero_bias(name: String, n: usize) -> ParamSpec {
    spec(name, vec![n], InitRule::Constant(0.0))
}

fn mbconv_specs(prefix: &str, s: &MbConvSpec) -> MbConvWeights<ParamSpec> {
    let e = s.expanded_channels();
    let sq = s.squeezed_channels();
    MbConvWeights {
        expand: (s.expansion_ratio != 1).then(|| {
            (
                kernel(format!("{prefix}.expand.kernel"), [e, s.in_channels, 1, 1]),
                zero_bias(format!("{prefix}.expand.bias"), e),
            )
        }),
        depthwise: (
            kernel(format!("{prefix}.depthwise.kernel"), [e, 1, s.kernel_size, s.kernel_size]),
            zero_bias(format!("{prefix}.depthwise.bias"), e),
        ),
        se: SeWeights {
            reduce_weight: spec(format!("{prefix}.se.reduce.weight"), vec![sq, e], InitRule::FanIn(e)),
            reduce_bias: zero_bias(format!("{prefix}.se.reduce.bias"), sq),
            expand_weight: spec(format!("{prefix}.se.expand.weight"), vec![e, sq], InitRule::FanIn(sq)),
            expand_bias: zero_bias(format!("{prefix}.se.expand.bias"), e),
        },
        project: (
            kernel(format!("{prefix}.project.kernel"), [s.out_channels, e, 1, 1]),
            zero_bias(format!("{prefix}.project.bias"), s.out_channels),
        ),
    }
}

pub(crate) fn layout_specs(config: &ModelConfig) -> ModelWeights<ParamSpec> {
    let hidden = config.hidden_channels;
    let k = config.lstm_kernel;
    let feat = config.feature_channels();
    let gate = |f: &dyn Fn(&str) -> ParamSpec| -> [ParamSpec; 4] { [f(GATES[0]), f(GATES[1]), f(GATES[2]), f(GATES[3])] };
    ModelWeights {
        stem: (
            kernel("stem.kernel".into(), [config.stem_channels, 1, 3, 3]),
            zero_bias("stem.bias".into(), config.stem_channels),
        ),
        stages: config
            .stage_specs
            .iter()
            .enumerate()
            .map(|(i, s)| mbconv_specs(&format!("stage{}", i + 1), s))
            .collect(),
        lstm: ConvLstmWeights {
            input_kernels: gate(&|g| kernel(format!("convlstm.wx_{g}"), [hidden, feat, k, k])),
            hidden_kernels: gate(&|g| kernel(format!("convlstm.wh_{g}"), [hidden, hidden, k, k])),
            biases: gate(&|g| {
                let value = if g == "f" { 1.0 } else { 0.0 };
                spec(format!("convlstm.b_{g}"), vec![hidden], InitRule::Constant(value))
            }),
        },
        head: (
            spec("head.weight".into(), vec![config.num_classes, hidden], InitRule::FanIn(hidden)),
            zero_bias("head.bias".into(), config.num_classes),
        ),
    }
}

/// A full parameter set: configuration, canonical layout, and the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ModelWeights<ParamId>,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Assembles a parameter set from tensors given in canonical order,
    /// checking each name and shape against the layout for `config`.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = layout_specs(&config);
        let mut expected = Vec::new();
        let layout = specs.map(&mut |s: &ParamSpec| {
            expected.push(s.clone());
            ParamId(expected.len() - 1)
        });
        let mut names = Vec::with_capacity(expected.len());
        let mut tensors = Vec::with_capacity(expected.len());
        let mut supplied = named.into_iter();
        for spec in &expected {
            let Some((name, t)) = supplied.next() else {
                return Err(ModelError::Mismatch {
                    tensor: spec.name.clone(),
                    detail: "missing".into(),
                });
            };
            if name != spec.name {
                return Err(ModelError::Mismatch {
                    tensor: spec.name.clone(),
                    detail: format!("found '{name}' in its place"),
                });
            }
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::Mismatch {
                    tensor: name,
                    detail: format!("shape {:?} != expected {:?}", t.shape(), spec.shape),
                });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some((extra, _)) = supplied.next() {
            return Err(ModelError::Mismatch {
                tensor: extra,
                detail: "not part of this architecture".into(),
            });
        }
        Ok(Self { config, layout, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ModelWeights<ParamId> {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Owned tensor view of the whole layout.
    pub fn weights(&self) -> ModelWeights<Tensor> {
        self.layout.map(&mut |id| self.tensors[id.0].clone())
    }

    pub fn stage_weights(&self, stage: usize) -> MbConvWeights<Tensor> {
        self.layout.stages[stage].map(&mut |id| self.tensors[id.0].clone())
    }

    pub fn lstm_params(&self) -> ConvLstmParams {
        self.layout.lstm.map(&mut |id| self.tensors[id.0].clone())
    }

    /// Registers every parameter with `graph` and returns the handles.
    pub fn bind<G: Graph>(&self, graph: &mut G) -> ModelWeights<G::Value> {
        self.layout.map(&mut |id| graph.param(*id, &self.tensors[id.0]))
    }
}

/// Deterministic initialization: conv and dense weights uniform on
/// `±sqrt(6 / fan_in)`, biases zero, ConvLSTM forget bias +1.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = layout_specs(config);
    let mut named = Vec::new();
    specs.map(&mut |s: &ParamSpec| {
        let t = match s.init {
            InitRule::FanIn(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&s.shape, |_| rng.random_range(-bound..bound))
            }
            InitRule::Constant(v) => Tensor::full(&s.shape, v),
        };
        named.push((s.name.clone(), t));
    });
    ModelParams::from_tensors(config.clone(), named)
}
