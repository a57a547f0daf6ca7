//! On-device style LLM stack at desk scale: 4-bit block quantization, a
//! GPT-NeoX decoder, LoRA merging, a checksummed model container with
//! verified download, the `<call>`/`<search>`/`<calendar>` action protocol
//! and chat session management.

pub mod actions;
pub mod adapter;
pub mod chat;
pub mod error;
pub mod fixture;
pub mod modelfile;
pub mod qtensor;
pub mod tokenizer;
pub mod transformer;

pub use error::{Error, Result};
