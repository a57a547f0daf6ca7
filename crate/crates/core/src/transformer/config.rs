use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotary frequency base.
pub const ROTARY_BASE: f32 = 10_000.0;
/// MLP hidden width as a multiple of `d_model`.
pub const MLP_RATIO: usize = 4;

/// Decoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    #[serde(default = "default_rotary_fraction")]
    pub rotary_fraction: f32,
    #[serde(default = "default_layernorm_eps")]
    pub layernorm_eps: f32,
}

fn default_rotary_fraction() -> f32 {
    1.0
}

fn default_layernorm_eps() -> f32 {
    1e-5
}

impl Default for ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128, 512 tokens, 256 positions.
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            vocab_size: 512,
            max_context: 256,
            rotary_fraction: default_rotary_fraction(),
            layernorm_eps: default_layernorm_eps(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("model config: {msg}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.vocab_size == 0 {
            return bad("layer, head, width and vocab counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_context < 1 {
            return bad("max_context must be at least 1".into());
        }
        if !(self.rotary_fraction > 0.0 && self.rotary_fraction <= 1.0) {
            return bad(format!("rotary_fraction {} not in (0, 1]", self.rotary_fraction));
        }
        if !(self.layernorm_eps.is_finite() && self.layernorm_eps >= 0.0) {
            return bad(format!("layernorm_eps {}", self.layernorm_eps));
        }
        let rot = self.head_dim() as f32 * self.rotary_fraction;
        if (rot - rot.round()).abs() > 1e-4 || rot.round() < 2.0 || rot.round() as usize % 2 != 0 {
            return bad(format!(
                "head_dim {} x rotary_fraction {} must be a positive even integer",
                self.head_dim(),
                self.rotary_fraction
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Leading dims of each head that receive rotary embeddings.
    pub fn rotary_dims(&self) -> usize {
        (self.head_dim() as f32 * self.rotary_fraction).round() as usize
    }

    pub fn mlp_dim(&self) -> usize {
        self.d_model * MLP_RATIO
    }
}
