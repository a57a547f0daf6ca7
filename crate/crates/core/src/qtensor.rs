//! Block-wise 4-bit quantization.
//!
//! Weights are grouped in runs of 32 along each row. Every run shares one
//! scale (`amax / 7`, stored as IEEE half) and each weight becomes a 4-bit
//! offset-binary code in `[0, 15]`, logical value `code - 8`. A block is 18
//! bytes on the wire, i.e. 4.5 bits per weight.

use half::f16;

use crate::error::{Error, Result};

/// Weights per block.
pub const BLOCK_LEN: usize = 32;
/// Serialized size of one [`Block4`].
pub const BLOCK_BYTES: usize = 18;
/// Largest logical code magnitude.
const QMAX: f32 = 7.0;
/// Offset-binary zero.
const ZERO_CODE: u8 = 8;

/// One block of 32 quantized weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block4 {
    scale: f16,
    /// Packed codes: low nibble holds the even index, high nibble the odd one.
    packed: [u8; BLOCK_LEN / 2],
}

impl Block4 {
    pub const ZERO: Block4 = Block4 {
        scale: f16::ZERO,
        packed: [ZERO_CODE | (ZERO_CODE << 4); BLOCK_LEN / 2],
    };

    /// Builds a block from a scale and 32 unpacked codes.
    pub fn from_parts(scale: f16, codes: &[u8; BLOCK_LEN]) -> Result<Self> {
        let s = scale.to_f32();
        if !s.is_finite() || s < 0.0 || scale.is_sign_negative() && s == 0.0 {
            return Err(Error::InvalidValue(format!("block scale {s}")));
        }
        if let Some(c) = codes.iter().find(|&&c| c > 15) {
            return Err(Error::InvalidValue(format!("code {c} out of range")));
        }
        if s == 0.0 && codes.iter().any(|&c| c != ZERO_CODE) {
            return Err(Error::InvalidValue("zero-scale block with non-zero codes".into()));
        }
        let mut packed = [0u8; BLOCK_LEN / 2];
        for (j, byte) in packed.iter_mut().enumerate() {
            *byte = codes[2 * j] | (codes[2 * j + 1] << 4);
        }
        Ok(Block4 { scale, packed })
    }

    pub fn scale(&self) -> f32 {
        self.scale.to_f32()
    }

    pub fn scale_f16(&self) -> f16 {
        self.scale
    }

    #[inline]
    pub fn code(&self, i: usize) -> u8 {
        let byte = self.packed[i / 2];
        if i % 2 == 0 {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    pub fn codes(&self) -> [u8; BLOCK_LEN] {
        std::array::from_fn(|i| self.code(i))
    }

    /// Dequantized weight `i`: `(code - 8) * scale`.
    #[inline]
    pub fn weight(&self, i: usize) -> f32 {
        (self.code(i) as i32 - ZERO_CODE as i32) as f32 * self.scale.to_f32()
    }

    pub fn dequantize(&self) -> [f32; BLOCK_LEN] {
        std::array::from_fn(|i| self.weight(i))
    }

    pub fn to_bytes(&self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        out[..2].copy_from_slice(&self.scale.to_bits().to_le_bytes());
        out[2..].copy_from_slice(&self.packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != BLOCK_BYTES {
            return Err(Error::Format(format!(
                "block needs {BLOCK_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let scale = f16::from_bits(u16::from_le_bytes([bytes[0], bytes[1]]));
        let mut codes = [0u8; BLOCK_LEN];
        for j in 0..BLOCK_LEN / 2 {
            codes[2 * j] = bytes[2 + j] & 0x0f;
            codes[2 * j + 1] = bytes[2 + j] >> 4;
        }
        Block4::from_parts(scale, &codes)
    }
}

/// Quantizes exactly 32 values into one block.
///
/// The codes are computed against the half-precision scale, so dequantizing
/// reproduces what a reader of the serialized block sees. Rounding is
/// half-away-from-zero.
pub fn quantize_block(values: &[f32]) -> Result<Block4> {
    if values.len() != BLOCK_LEN {
        return Err(Error::Shape(format!(
            "block needs {BLOCK_LEN} values, got {}",
            values.len()
        )));
    }
    let mut amax = 0.0f32;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite weight {v}")));
        }
        amax = amax.max(v.abs());
    }
    if amax == 0.0 {
        return Ok(Block4::ZERO);
    }
    let scale = f16::from_f32(amax / QMAX);
    if scale.is_infinite() {
        return Err(Error::InvalidValue(format!(
            "block absmax {amax} exceeds the half-precision scale range"
        )));
    }
    let s = scale.to_f32();
    if s == 0.0 {
        // amax / 7 underflows half precision; the block is indistinguishable from zero.
        return Ok(Block4::ZERO);
    }
    let codes: [u8; BLOCK_LEN] = std::array::from_fn(|i| {
        let q = (values[i] / s).round().clamp(-QMAX, QMAX);
        (q as i32 + ZERO_CODE as i32) as u8
    });
    Block4::from_parts(scale, &codes)
}

/// Row-major dense f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        DenseTensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected 2-D tensor, got {:?}", self.dims))),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let cols = self.dims[self.dims.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// `y = W x` for a 2-D `W`, accumulating each row left to right in f32.
    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        let (rows, cols) = self.shape2()?;
        if x.len() != cols {
            return Err(Error::Shape(format!(
                "matvec: input length {} != cols {cols}",
                x.len()
            )));
        }
        Ok((0..rows)
            .map(|r| {
                let mut acc = 0.0f32;
                for (w, xi) in self.row(r).iter().zip(x) {
                    acc += w * xi;
                }
                acc
            })
            .collect())
    }
}

/// A 2-D matrix stored as row-major [`Block4`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    rows: usize,
    cols: usize,
    blocks: Vec<Block4>,
}

impl QTensor {
    pub fn from_blocks(rows: usize, cols: usize, blocks: Vec<Block4>) -> Result<Self> {
        if cols % BLOCK_LEN != 0 {
            return Err(Error::Shape(format!(
                "cols {cols} is not a multiple of {BLOCK_LEN}"
            )));
        }
        if blocks.len() != rows * cols / BLOCK_LEN {
            return Err(Error::Shape(format!(
                "{rows}x{cols} needs {} blocks, got {}",
                rows * cols / BLOCK_LEN,
                blocks.len()
            )));
        }
        Ok(QTensor { rows, cols, blocks })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn blocks(&self) -> &[Block4] {
        &self.blocks
    }

    fn row_blocks(&self, r: usize) -> &[Block4] {
        let per_row = self.cols / BLOCK_LEN;
        &self.blocks[r * per_row..(r + 1) * per_row]
    }

    /// Serialized payload size in bytes.
    pub fn byte_len(&self) -> usize {
        q4_byte_len(self.rows, self.cols)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        for b in &self.blocks {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        if cols % BLOCK_LEN != 0 {
            return Err(Error::Shape(format!(
                "cols {cols} is not a multiple of {BLOCK_LEN}"
            )));
        }
        if bytes.len() != q4_byte_len(rows, cols) {
            return Err(Error::Format(format!(
                "{rows}x{cols} q4 payload must be {} bytes, got {}",
                q4_byte_len(rows, cols),
                bytes.len()
            )));
        }
        let blocks = bytes
            .chunks_exact(BLOCK_BYTES)
            .map(Block4::from_bytes)
            .collect::<Result<Vec<_>>>()?;
        QTensor::from_blocks(rows, cols, blocks)
    }

    /// Copies row `r` out as f32 (used for embedding lookups).
    pub fn dequantize_row(&self, r: usize) -> Vec<f32> {
        self.row_blocks(r)
            .iter()
            .flat_map(|b| b.dequantize())
            .collect()
    }
}

/// Bytes taken by a q4 `rows x cols` matrix.
pub fn q4_byte_len(rows: usize, cols: usize) -> usize {
    rows * cols / BLOCK_LEN * BLOCK_BYTES
}

pub fn quantize_tensor(src: &DenseTensor) -> Result<QTensor> {
    let (rows, cols) = src.shape2()?;
    if cols % BLOCK_LEN != 0 {
        return Err(Error::Shape(format!(
            "cols {cols} is not a multiple of {BLOCK_LEN}"
        )));
    }
    let blocks = src
        .data()
        .chunks_exact(BLOCK_LEN)
        .map(quantize_block)
        .collect::<Result<Vec<_>>>()?;
    QTensor::from_blocks(rows, cols, blocks)
}

pub fn dequantize(q: &QTensor) -> DenseTensor {
    let data = q.blocks.iter().flat_map(|b| b.dequantize()).collect();
    DenseTensor {
        dims: vec![q.rows, q.cols],
        data,
    }
}

/// Quantized matrix-vector product.
///
/// Each output row accumulates in f32, block by block, left to right, with
/// every weight dequantized as `(code - 8) * scale` before the multiply. This
/// is exactly the arithmetic of [`DenseTensor::matvec`] over [`dequantize`],
/// so the two agree bit for bit.
pub fn qmatvec(w: &QTensor, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != w.cols {
        return Err(Error::Shape(format!(
            "qmatvec: input length {} != cols {}",
            x.len(),
            w.cols
        )));
    }
    Ok((0..w.rows)
        .map(|r| {
            let mut acc = 0.0f32;
            for (b, xs) in w.row_blocks(r).iter().zip(x.chunks_exact(BLOCK_LEN)) {
                let scale = b.scale();
                for (i, &xi) in xs.iter().enumerate() {
                    let q = (b.code(i) as i32 - ZERO_CODE as i32) as f32;
                    acc += (q * scale) * xi;
                }
            }
            acc
        })
        .collect())
}
