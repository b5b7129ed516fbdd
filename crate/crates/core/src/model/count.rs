//! Closed-form trainable-parameter accounting.

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::numerics::ops::conv1d_param_count;

/// Trainable parameters of one encoder block with model dim `d` and FFN hidden `f`:
/// Q/K/V/O projections with bias, a biased two-layer FFN, and two affine layer norms.
pub fn per_block_params(d: usize, f: usize) -> usize {
    let attention = 4 * d * d + 4 * d;
    let ffn = 2 * d * f + f + d;
    let norms = 4 * d;
    attention + ffn + norms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub per_block: usize,
    pub blocks: usize,
    pub blocks_subtotal: usize,
    /// Front-end convolutions plus the prediction head. Positional encodings are fixed.
    pub overhead: usize,
    pub total: usize,
}

pub fn analytic_param_count(config: &ModelConfig) -> ParamBreakdown {
    let d = config.d_model;
    let per_block = per_block_params(d, config.ffn_hidden());
    let blocks = config.encoder_blocks();
    let blocks_subtotal = blocks * per_block;
    let front: usize = config
        .modalities
        .iter()
        .map(|m| conv1d_param_count(m.channels, d, config.kernel_size))
        .sum();
    let head = d * config.num_classes + config.num_classes;
    let overhead = front + head;
    ParamBreakdown { per_block, blocks, blocks_subtotal, overhead, total: blocks_subtotal + overhead }
}
