//! The trainable point encoder, the frozen image-encoder stub, class
//! prototypes and checkpoints.

mod block;
mod checkpoint;
mod depth;
mod point;
mod text;
mod tokenizer;

pub use block::{AttentionMask, BlockOutput, CrossProjections, TransformerBlock};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use depth::{DepthEncoder, DepthFeatureSet, ImageForward};
pub use point::{LayerHook, NoHook, PointEncoder, PointFeatureSet, PointForward};
pub use text::{
    fnv1a64, prototype_vector, text_prototypes, zero_shot_logits, zero_shot_var, zero_shot_with, ForeignEncoder,
    PrototypeMatrix,
};
pub use tokenizer::{farthest_point_sample, group_points, group_size, PointGroups, Tokenizer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// `N_l`.
    pub layers: usize,
    /// `d_f`.
    pub dim: usize,
    pub heads: usize,
    pub tokens: usize,
    pub ffn_hidden: usize,
    /// Side of the square image patches of the image stub.
    pub patch: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 12, dim: 64, heads: 4, tokens: 32, ffn_hidden: 128, patch: 8, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.tokens == 0 || self.ffn_hidden == 0 {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("dim {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if self.patch == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        Ok(())
    }
}
