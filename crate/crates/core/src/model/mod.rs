//! The text-gated U-Net and its text-free baseline.

mod attention;
mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Real, Tensor};

pub use attention::{cross_attention, AttentionOutput, CrossAttnVars};
pub use network::{Batch, Forward, LevelTrace, Network};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint tensor {name} has shape {found:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("input: {0}")]
    Input(String),
}

/// Which decoder the network uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Cross-attention gate before every decoder level.
    TextGated,
    /// Plain U-Net: the gate is the identity and no text path exists.
    Unet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub depth: usize,
    /// `c_1..c_D` followed by the bottleneck width.
    pub channels: Vec<usize>,
    pub d_e: usize,
    pub max_tokens: usize,
    /// When false, softmax ignores token positions at or beyond the valid length.
    pub attend_padding: bool,
    pub init_seed: u64,
    /// Keys the frozen token vectors.
    pub embed_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            depth: 3,
            channels: vec![8, 16, 32, 64],
            d_e: 32,
            max_tokens: 32,
            attend_padding: true,
            init_seed: 0,
            embed_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if !self.image_size.is_power_of_two() {
            return fail(format!("image_size {} is not a power of two", self.image_size));
        }
        if !self.image_size.is_multiple_of(1 << self.depth) || self.image_size < (1 << self.depth) {
            return fail(format!("image_size {} not divisible by 2^{}", self.image_size, self.depth));
        }
        if self.channels.len() != self.depth + 1 {
            return fail(format!("expected {} channel counts (depth + bottleneck), got {}", self.depth + 1, self.channels.len()));
        }
        if self.channels[0] == 0 || self.channels.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!("channels {:?} must be positive and strictly increasing", self.channels));
        }
        if self.d_e == 0 || self.max_tokens == 0 {
            return fail("d_e and max_tokens must be at least 1".into());
        }
        Ok(())
    }

    /// Channel count of decoder level `level` (1-based, 1 = full resolution).
    pub fn level_channels(&self, level: usize) -> usize {
        self.channels[level - 1]
    }

    pub fn embedder(&self) -> crate::textenc::Embedder {
        crate::textenc::Embedder { max_tokens: self.max_tokens, d_e: self.d_e, seed: self.embed_seed }
    }
}

/// `sigmoid(logit) > threshold`, as a 0/1 mask.
pub fn predict_mask<T: Real>(logits: &[T], threshold: f64) -> Vec<u8> {
    logits
        .iter()
        .map(|&z| {
            let p = 1.0 / (1.0 + (-z.as_f64()).exp());
            (p > threshold) as u8
        })
        .collect()
}

/// Per-sample masks from an `N x 1 x S x S` logit tensor.
pub fn predict_masks<T: Real>(logits: &Tensor<T>, threshold: f64) -> Vec<Vec<u8>> {
    let per = logits.numel() / logits.dim(0).max(1);
    logits.data().chunks(per).map(|c| predict_mask(c, threshold)).collect()
}
