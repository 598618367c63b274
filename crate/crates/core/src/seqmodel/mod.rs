//! Small decoder-only sequence model used in both roles: the dynamics
//! model (predicts action text) and the world model (predicts the next
//! board). Training, scoring and sampling are all implemented here from
//! scratch; the backward pass is verified against finite differences.

mod checkpoint;
pub mod real;
mod sample;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};

pub use checkpoint::{ModelCheckpoint, TrainManifest};
pub use sample::{AllowedRange, Length, SampleConfig};
pub use train::{cosine_lr, train, LossMode, TrainConfig};
pub use transformer::{log_softmax_at, DecodeState, Layout, ParamEntry, ParamKind, Transformer};

use crate::error::{Error, Result};
use crate::tokencodec::{max_sequence_len, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// `f32` arithmetic.
    #[default]
    Standard,
    /// `f64` arithmetic, used for gradient checking.
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the MLP as a multiple of `d_model`.
    pub ff_multiplier: usize,
    pub context_length: usize,
    pub precision: Precision,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: Vocab::standard().len(),
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ff_multiplier: 4,
            context_length: 160,
            precision: Precision::Standard,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        self.d_model * self.ff_multiplier
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("model dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.ff_multiplier == 0 || self.context_length < 2 {
            return bad("ff_multiplier must be positive and context_length at least 2");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    /// Also checks that the longest encoded triplet for a board of `cells` cells fits.
    pub fn validate_for_board(&self, cells: usize) -> Result<()> {
        self.validate()?;
        let need = max_sequence_len(cells);
        if self.context_length < need {
            return Err(Error::ConfigInvalid(format!(
                "context_length {} is shorter than the longest encoded triplet ({need})",
                self.context_length
            )));
        }
        Ok(())
    }
}
