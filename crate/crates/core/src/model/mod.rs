//! The ENConvLSTM network: an MBConv/SE backbone applied per frame, one
//! ConvLSTM layer over time, and a pooled dense softmax head.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{
    config_header, load_checkpoint, parse_config_header, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use config::{MbConvSpec, ModelConfig, STAGE_COUNT};
pub use network::{
    backbone, backbone_forward, classify_logits, classify_sequence, convlstm_cell, convlstm_step, mbconv_block,
    mbconv_forward, se_block, se_recalibrate, sequence_logits, ConvLstmState,
};
pub use params::{
    init_parameters, ConvLstmParams, ConvLstmWeights, MbConvWeights, ModelParams, ModelWeights, SeWeights, GATES,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parameter '{tensor}' mismatch: {detail}")]
    Mismatch { tensor: String, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
