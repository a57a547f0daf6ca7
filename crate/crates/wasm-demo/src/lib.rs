//! Browser bindings for three pieces of the core library: the 4-bit block
//! quantizer, the streaming action parser and container size accounting.
//!
//! Every export takes and returns plain strings (JSON for structured data),
//! so the same functions are exercised by native tests.

use serde::Serialize;
use stlm_core::actions::ActionParser;
use stlm_core::modelfile::{plan_layout, target_dtype};
use stlm_core::qtensor::{quantize_block as quantize, BLOCK_LEN};
use stlm_core::tokenizer::Vocab;
use stlm_core::transformer::{byte_len, tensor_shapes, DType, ModelConfig};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct BlockView {
    pub values: Vec<f32>,
    pub amax: f32,
    pub scale: f32,
    pub codes: Vec<u8>,
    pub dequantized: Vec<f32>,
    pub errors: Vec<f32>,
    pub max_error: f32,
    /// Half a quantization step, `amax / 14`.
    pub half_step: f32,
    pub bytes_hex: String,
}

/// Parses up to 32 numbers separated by commas or whitespace. Missing
/// values are zero.
pub fn parse_block(input: &str) -> Result<Vec<f32>, String> {
    let mut values = input
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f32>().map_err(|_| format!("`{s}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() > BLOCK_LEN {
        return Err(format!("a block holds {BLOCK_LEN} values, got {}", values.len()));
    }
    values.resize(BLOCK_LEN, 0.0);
    Ok(values)
}

pub fn explore_block(input: &str) -> Result<BlockView, String> {
    let values = parse_block(input)?;
    let block = quantize(&values).map_err(|e| e.to_string())?;
    let dequantized = block.dequantize().to_vec();
    let errors: Vec<f32> = values.iter().zip(&dequantized).map(|(a, b)| (a - b).abs()).collect();
    let amax = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    Ok(BlockView {
        amax,
        scale: block.scale(),
        codes: block.codes().to_vec(),
        max_error: errors.iter().copied().fold(0.0, f32::max),
        half_step: amax / 14.0,
        bytes_hex: block.to_bytes().iter().map(|b| format!("{b:02x}")).collect(),
        values,
        dequantized,
        errors,
    })
}

/// Quantizes one block and returns a JSON [`BlockView`].
#[wasm_bindgen(js_name = quantizeBlock)]
pub fn quantize_block(input: &str) -> Result<String, String> {
    let view = explore_block(input)?;
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Incremental action parser. Each call returns a JSON array of events.
#[wasm_bindgen]
pub struct StreamParser {
    inner: ActionParser,
}

#[wasm_bindgen]
impl StreamParser {
    #[wasm_bindgen(constructor)]
    pub fn new(cap: Option<usize>) -> StreamParser {
        StreamParser {
            inner: cap.map_or_else(ActionParser::new, ActionParser::with_cap),
        }
    }

    pub fn feed(&mut self, chunk: &str) -> String {
        to_json(&self.inner.feed(chunk))
    }

    pub fn flush(&mut self) -> String {
        to_json(&self.inner.flush())
    }

    /// True while a tag is open and its payload is being held back.
    #[wasm_bindgen(js_name = isInside)]
    pub fn is_inside(&self) -> bool {
        self.inner.is_inside()
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("events serialize")
}

#[derive(Debug, Serialize)]
pub struct TensorLine {
    pub name: String,
    pub dims: Vec<usize>,
    pub params: u64,
    pub f16_bytes: u64,
    pub quantized_dtype: DType,
    pub quantized_bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct SizeAccount {
    pub params: u64,
    /// Embedded vocabulary text; zero when the fixture vocabulary can't
    /// cover the requested size.
    pub vocab_bytes: u64,
    pub f16_file_bytes: u64,
    pub quantized_file_bytes: u64,
    pub ratio: f64,
    pub tensors: Vec<TensorLine>,
}

/// Container sizes for a config at 16 bits and after quantization.
pub fn account(config: &ModelConfig) -> Result<SizeAccount, String> {
    config.validate().map_err(|e| e.to_string())?;
    if config.d_model % BLOCK_LEN != 0 {
        return Err(format!("d_model {} is not a multiple of {BLOCK_LEN}", config.d_model));
    }
    let shapes = tensor_shapes(config);
    let vocab_bytes = Vocab::fixture(config.vocab_size).map_or(0, |v| v.to_text().len());
    let table = |dtype_of: &dyn Fn(&[usize]) -> DType| {
        shapes
            .iter()
            .map(|(n, d)| (n.clone(), dtype_of(d), d.clone()))
            .collect::<Vec<_>>()
    };
    let (_, f16_file_bytes) = plan_layout(vocab_bytes, &table(&|_| DType::F16));
    let (_, quantized_file_bytes) = plan_layout(vocab_bytes, &table(&target_dtype));
    let tensors: Vec<TensorLine> = shapes
        .into_iter()
        .map(|(name, dims)| {
            let q = target_dtype(&dims);
            TensorLine {
                params: dims.iter().product::<usize>() as u64,
                f16_bytes: byte_len(DType::F16, &dims) as u64,
                quantized_dtype: q,
                quantized_bytes: byte_len(q, &dims) as u64,
                name,
                dims,
            }
        })
        .collect();
    Ok(SizeAccount {
        params: tensors.iter().map(|t| t.params).sum(),
        vocab_bytes: vocab_bytes as u64,
        f16_file_bytes,
        quantized_file_bytes,
        ratio: quantized_file_bytes as f64 / f16_file_bytes as f64,
        tensors,
    })
}

/// Takes a JSON model config and returns a JSON [`SizeAccount`].
#[wasm_bindgen(js_name = sizeReport)]
pub fn size_report(config_json: &str) -> Result<String, String> {
    let config: ModelConfig = serde_json::from_str(config_json).map_err(|e| e.to_string())?;
    Ok(to_json(&account(&config)?))
}

/// The toy default config as JSON, to prefill the form.
#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config() -> String {
    serde_json::to_string_pretty(&ModelConfig::default()).expect("config serializes")
}
