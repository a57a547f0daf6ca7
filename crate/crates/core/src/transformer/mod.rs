//! GPT-NeoX style decoder: forward pass with KV cache, sampling and
//! streaming generation.

mod config;
mod generate;
mod model;
mod sample;
mod weights;

pub use config::{ModelConfig, MLP_RATIO, ROTARY_BASE};
pub use generate::{generate, GenerationResult, StopReason, StopSpec};
pub use model::{softmax, softmax_in_place, KVCache, Transformer};
pub use sample::{argmax, sample, Sampler, SamplerParams};
pub use weights::{
    attn_out_name, byte_len, mlp_down_name, mlp_up_name, qkv_name, tensor_shapes, DType, LayerNorm,
    LayerWeights, ModelWeights, Tensor, EMBED, FINAL_NORM, UNEMBED,
};
