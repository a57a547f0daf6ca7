//! On-disk model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0   "STLM"
//! 4   u16 format version (1)
//! 6   u16 flags (bit 0: adapter file)
//! 8   config: u32 n_layers, n_heads, d_model, vocab_size, max_context,
//!             f32 rotary_fraction, f32 layernorm_eps          (all zero for adapters)
//! 36  adapter: u32 rank, f32 alpha                           (zero for models)
//! 44  u32 vocab length, vocab text (zero length: no vocab stored)
//!     u32 tensor count
//!     per tensor: u16 name length, name, u8 dtype (0 f32, 1 f16, 2 q4),
//!                 u8 rank, u64 dims[rank], u64 offset, u64 length
//!     zero padding, then payload entries, each starting on a 32-byte boundary
//!     16-byte MD5 of every preceding byte
//! ```

mod checksum;
#[cfg(feature = "fetch")]
mod fetch;
mod manifest;
mod quantize;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

pub use checksum::{md5_digest, md5_hex, Md5Stream};
#[cfg(feature = "fetch")]
pub use fetch::{fetch_model, load_manifest, part_path, FetchOutcome};
pub use manifest::ModelManifest;
pub use quantize::{quantize_model, quantize_weights, target_dtype, SizeReport, TensorSize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocab;
use crate::transformer::{byte_len, DType, ModelConfig, ModelWeights, Tensor};

pub const MAGIC: &[u8; 4] = b"STLM";
pub const FORMAT_VERSION: u16 = 1;
pub const ALIGN: usize = 32;
pub const FOOTER_LEN: usize = 16;
const FLAG_ADAPTER: u16 = 1;
const FIXED_HEADER_LEN: usize = 44;

/// Rank and scaling stored in adapter files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdapterHeader {
    pub rank: u32,
    pub alpha: f32,
}

/// Parsed container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub config: Option<ModelConfig>,
    pub adapter: Option<AdapterHeader>,
    pub vocab: Option<Vocab>,
    pub tensors: Vec<(String, Tensor)>,
}

/// One tensor-table row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

/// What a serialized file contains, without the payload.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileSummary {
    pub version: u16,
    pub adapter: Option<AdapterHeader>,
    pub config: Option<ModelConfig>,
    pub vocab_entries: Option<usize>,
    pub total_bytes: u64,
    pub payload_bytes_by_dtype: BTreeMap<&'static str, u64>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded model: configuration, weights and tokenizer.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub vocab: Vocab,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn header_len(vocab_text_len: usize, tensors: &[(String, DType, Vec<usize>)]) -> usize {
    let table: usize = tensors
        .iter()
        .map(|(name, _, dims)| 2 + name.len() + 2 + 8 * dims.len() + 16)
        .sum();
    FIXED_HEADER_LEN + 4 + vocab_text_len + 4 + table
}

/// Assigns payload offsets for a table of `(name, dtype, dims)`.
/// Returns the entries and the total file size including the footer.
pub fn plan_layout(
    vocab_text_len: usize,
    tensors: &[(String, DType, Vec<usize>)],
) -> (Vec<TensorEntry>, u64) {
    let header = header_len(vocab_text_len, tensors);
    let mut pos = align_up(header);
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, dtype, dims) in tensors {
        let length = byte_len(*dtype, dims);
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: *dtype,
            dims: dims.clone(),
            offset: pos as u64,
            length: length as u64,
        });
        pos = align_up(pos + length);
    }
    // no padding after the last entry
    let end = entries
        .last()
        .map_or(header, |e| (e.offset + e.length) as usize);
    (entries, (end + FOOTER_LEN) as u64)
}

impl ModelFile {
    pub fn from_model(config: &ModelConfig, weights: &ModelWeights, vocab: Option<&Vocab>) -> Self {
        ModelFile {
            config: Some(config.clone()),
            adapter: None,
            vocab: vocab.cloned(),
            tensors: weights
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    fn table(&self) -> Vec<(String, DType, Vec<usize>)> {
        self.tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.dtype(), t.dims()))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.config.is_some() == self.adapter.is_some() {
            return Err(Error::InvalidInput(
                "a container holds either a model config or an adapter header".into(),
            ));
        }
        let vocab_text = self.vocab.as_ref().map(Vocab::to_text).unwrap_or_default();
        let (entries, total) = plan_layout(vocab_text.len(), &self.table());
        let mut out = Vec::with_capacity(total as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let flags = if self.adapter.is_some() { FLAG_ADAPTER } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        match &self.config {
            Some(c) => {
                for v in [c.n_layers, c.n_heads, c.d_model, c.vocab_size, c.max_context] {
                    out.extend_from_slice(&to_u32(v, "config field")?.to_le_bytes());
                }
                out.extend_from_slice(&c.rotary_fraction.to_le_bytes());
                out.extend_from_slice(&c.layernorm_eps.to_le_bytes());
            }
            None => out.extend_from_slice(&[0u8; 28]),
        }
        match &self.adapter {
            Some(a) => {
                out.extend_from_slice(&a.rank.to_le_bytes());
                out.extend_from_slice(&a.alpha.to_le_bytes());
            }
            None => out.extend_from_slice(&[0u8; 8]),
        }
        out.extend_from_slice(&to_u32(vocab_text.len(), "vocab length")?.to_le_bytes());
        out.extend_from_slice(vocab_text.as_bytes());
        out.extend_from_slice(&to_u32(entries.len(), "tensor count")?.to_le_bytes());
        for e in &entries {
            let name_len = u16::try_from(e.name.len())
                .map_err(|_| Error::InvalidInput(format!("tensor name too long: {}", e.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.length.to_le_bytes());
        }
        for (e, (_, t)) in entries.iter().zip(&self.tensors) {
            out.resize(e.offset as usize, 0);
            out.extend_from_slice(&t.to_bytes());
        }
        let digest = md5_digest(&out);
        out.extend_from_slice(&digest);
        debug_assert_eq!(out.len() as u64, total);
        Ok(out)
    }

    /// Parses and verifies a container. The checksum footer is checked
    /// before any field past the header is trusted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (summary, vocab) = parse_header(bytes)?;
        let mut tensors = Vec::with_capacity(summary.tensors.len());
        for e in &summary.tensors {
            let start = e.offset as usize;
            let end = start + e.length as usize;
            tensors.push((
                e.name.clone(),
                Tensor::from_bytes(e.dtype, e.dims.clone(), &bytes[start..end])?,
            ));
        }
        Ok(ModelFile {
            config: summary.config,
            adapter: summary.adapter,
            vocab,
            tensors,
        })
    }

    /// Builds the typed model, falling back to the fixture vocabulary when
    /// none is stored.
    pub fn into_model(self) -> Result<LoadedModel> {
        let config = self
            .config
            .ok_or_else(|| Error::Format("adapter file where a model was expected".into()))?;
        let vocab = match self.vocab {
            Some(v) => v,
            None => Vocab::fixture(config.vocab_size)?,
        };
        if vocab.len() > config.vocab_size {
            return Err(Error::Format(format!(
                "vocab has {} entries but the model only {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let weights = ModelWeights::from_named(&config, self.tensors.into_iter().collect())?;
        Ok(LoadedModel {
            config,
            weights,
            vocab,
        })
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptFile(format!("truncated header at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(FileSummary, Option<Vocab>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an STLM file".into()));
    }
    if bytes.len() < 6 {
        return Err(Error::CorruptFile("truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    if bytes.len() < FIXED_HEADER_LEN + 8 + FOOTER_LEN {
        return Err(Error::CorruptFile(format!("file too short ({} bytes)", bytes.len())));
    }
    let body = &bytes[..bytes.len() - FOOTER_LEN];
    let stored = &bytes[bytes.len() - FOOTER_LEN..];
    let actual = md5_digest(body);
    if stored != actual {
        return Err(Error::ChecksumMismatch {
            expected: hex(stored),
            actual: hex(&actual),
        });
    }

    let mut r = Reader { bytes: body, pos: 6 };
    let flags = r.u16()?;
    if flags & !FLAG_ADAPTER != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#06x}")));
    }
    let raw: Vec<u32> = (0..5).map(|_| r.u32()).collect::<Result<_>>()?;
    let rotary_fraction = r.f32()?;
    let layernorm_eps = r.f32()?;
    let rank = r.u32()?;
    let alpha = r.f32()?;
    let (config, adapter) = if flags & FLAG_ADAPTER != 0 {
        (None, Some(AdapterHeader { rank, alpha }))
    } else {
        let c = ModelConfig {
            n_layers: raw[0] as usize,
            n_heads: raw[1] as usize,
            d_model: raw[2] as usize,
            vocab_size: raw[3] as usize,
            max_context: raw[4] as usize,
            rotary_fraction,
            layernorm_eps,
        };
        c.validate().map_err(|e| Error::Format(e.to_string()))?;
        (Some(c), None)
    };
    let vocab_len = r.u32()? as usize;
    let vocab = if vocab_len == 0 {
        None
    } else {
        let text = std::str::from_utf8(r.take(vocab_len)?)
            .map_err(|_| Error::Format("vocab block is not UTF-8".into()))?;
        Some(Vocab::from_text(text)?)
    };
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    let mut payload_bytes_by_dtype = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_code(r.u8()?)?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        let length = r.u64()?;
        if dtype == DType::Q4 && (dims.len() != 2 || dims[1] % crate::qtensor::BLOCK_LEN != 0) {
            return Err(Error::Format(format!("tensor `{name}`: bad q4 dims {dims:?}")));
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if numel.is_none_or(|n| n > body.len().saturating_mul(2)) {
            return Err(Error::Format(format!("tensor `{name}`: implausible dims {dims:?}")));
        }
        if length as usize != byte_len(dtype, &dims) {
            return Err(Error::Format(format!(
                "tensor `{name}`: length {length} does not match {} {dims:?}",
                dtype.name()
            )));
        }
        *payload_bytes_by_dtype.entry(dtype.name()).or_insert(0) += length;
        entries.push(TensorEntry {
            name,
            dtype,
            dims,
            offset,
            length,
        });
    }
    let mut floor = r.pos as u64;
    for e in &entries {
        if e.offset < floor || e.offset % ALIGN as u64 != 0 {
            return Err(Error::Format(format!(
                "tensor `{}` offset {} overlaps or is misaligned",
                e.name, e.offset
            )));
        }
        floor = e.offset + e.length;
    }
    if floor > body.len() as u64 {
        return Err(Error::CorruptFile(format!(
            "payload needs {floor} bytes, file body has {}",
            body.len()
        )));
    }
    Ok((
        FileSummary {
            version,
            adapter,
            config,
            vocab_entries: vocab.as_ref().map(Vocab::len),
            total_bytes: bytes.len() as u64,
            payload_bytes_by_dtype,
            tensors: entries,
        },
        vocab,
    ))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Header, config and tensor table of a serialized file (checksum verified).
pub fn summarize(bytes: &[u8]) -> Result<FileSummary> {
    parse_header(bytes).map(|(s, _)| s)
}

pub fn write_model(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    weights: &ModelWeights,
    vocab: Option<&Vocab>,
) -> Result<FileSummary> {
    weights.validate(config)?;
    let bytes = ModelFile::from_model(config, weights, vocab).to_bytes()?;
    fs::write(path, &bytes)?;
    summarize(&bytes)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let bytes = fs::read(path)?;
    ModelFile::from_bytes(&bytes)?.into_model()
}

pub fn read_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    ModelFile::from_bytes(&fs::read(path)?)
}
