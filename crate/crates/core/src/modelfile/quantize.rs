//! Whole-model 4-bit conversion with exact size accounting.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{plan_layout, ModelFile};
use crate::error::{Error, Result};
use crate::qtensor::{quantize_tensor, BLOCK_LEN};
use crate::transformer::{byte_len, DType, ModelWeights, Tensor};

/// Per-tensor line of a [`SizeReport`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorSize {
    pub name: String,
    pub dims: Vec<usize>,
    pub src_dtype: DType,
    pub dst_dtype: DType,
    pub src_bytes: u64,
    pub dst_bytes: u64,
}

/// Before/after sizes of a quantization run.
///
/// `f16_bytes` is the size the same container would have with every tensor
/// at 16 bits, the reference the ratio is taken against.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeReport {
    pub src_file_bytes: u64,
    pub f16_bytes: u64,
    pub predicted_bytes: u64,
    pub dst_file_bytes: u64,
    pub ratio: f64,
    pub tensors: Vec<TensorSize>,
}

/// Storage type after quantization: q4 for matrices, f16 otherwise.
pub fn target_dtype(dims: &[usize]) -> DType {
    if dims.len() == 2 {
        DType::Q4
    } else {
        DType::F16
    }
}

fn convert(name: &str, t: &Tensor) -> Result<Tensor> {
    match t {
        Tensor::Q4(_) => Err(Error::AlreadyQuantized),
        _ if t.dims().len() == 2 => {
            let dims = t.dims();
            if dims[1] % BLOCK_LEN != 0 {
                return Err(Error::Shape(format!(
                    "tensor `{name}` {dims:?}: cols not a multiple of {BLOCK_LEN}"
                )));
            }
            quantize_tensor(&t.to_dense())
                .map(Tensor::Q4)
                .map_err(|e| Error::Shape(format!("tensor `{name}`: {e}")))
        }
        Tensor::F16(_) => Ok(t.clone()),
        Tensor::F32(d) => Ok(Tensor::f16(d.clone())),
    }
}

/// Quantizes 2-D tensors to q4 and stores 1-D tensors at f16.
pub fn quantize_weights(weights: &ModelWeights) -> Result<ModelWeights> {
    let mut first_err = None;
    let out = weights.map(|name, t| match convert(name, t) {
        Ok(q) => q,
        Err(e) => {
            first_err.get_or_insert(e);
            t.clone()
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn quantize_model(src: impl AsRef<Path>, dst: impl AsRef<Path>) -> Result<SizeReport> {
    let src_bytes = fs::read(src)?;
    let file = ModelFile::from_bytes(&src_bytes)?;
    if file.config.is_none() {
        return Err(Error::Format("cannot quantize an adapter file".into()));
    }
    let tensors = file
        .tensors
        .iter()
        .map(|(n, t)| convert(n, t).map(|q| (n.clone(), q)))
        .collect::<Result<Vec<_>>>()?;

    let vocab_len = file.vocab.as_ref().map_or(0, |v| v.to_text().len());
    let table = |dtype_of: &dyn Fn(&[usize]) -> DType| {
        file.tensors
            .iter()
            .map(|(n, t)| {
                let dims = t.dims();
                (n.clone(), dtype_of(&dims), dims)
            })
            .collect::<Vec<_>>()
    };
    let (_, f16_bytes) = plan_layout(vocab_len, &table(&|_| DType::F16));
    let (_, predicted_bytes) = plan_layout(vocab_len, &table(&target_dtype));

    let sizes = file
        .tensors
        .iter()
        .map(|(name, t)| {
            let dims = t.dims();
            let dst_dtype = target_dtype(&dims);
            TensorSize {
                name: name.clone(),
                src_dtype: t.dtype(),
                dst_dtype,
                src_bytes: t.byte_len() as u64,
                dst_bytes: byte_len(dst_dtype, &dims) as u64,
                dims,
            }
        })
        .collect();

    let out = ModelFile { tensors, ..file }.to_bytes()?;
    fs::write(dst, &out)?;
    Ok(SizeReport {
        src_file_bytes: src_bytes.len() as u64,
        f16_bytes,
        predicted_bytes,
        dst_file_bytes: out.len() as u64,
        ratio: out.len() as f64 / f16_bytes as f64,
        tensors: sizes,
    })
}
