use std::collections::BTreeMap;

use half::f16;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::qtensor::{self, DenseTensor, QTensor};

/// Storage precision of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
    Q4,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
            DType::Q4 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F16),
            2 => Ok(DType::Q4),
            _ => Err(Error::Format(format!("unknown dtype code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::Q4 => "q4",
        }
    }
}

/// A weight tensor at one of the supported precisions.
///
/// `F16` keeps its values widened to f32; every value is exactly
/// representable in half precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    F32(DenseTensor),
    F16(DenseTensor),
    Q4(QTensor),
}

impl Tensor {
    /// Rounds `t` to half precision.
    pub fn f16(mut t: DenseTensor) -> Self {
        for v in t.data_mut() {
            *v = f16::from_f32(*v).to_f32();
        }
        Tensor::F16(t)
    }

    pub fn dtype(&self) -> DType {
        match self {
            Tensor::F32(_) => DType::F32,
            Tensor::F16(_) => DType::F16,
            Tensor::Q4(_) => DType::Q4,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Tensor::F32(t) | Tensor::F16(t) => t.dims().to_vec(),
            Tensor::Q4(q) => vec![q.rows(), q.cols()],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Dense f32 view (dequantizing q4).
    pub fn to_dense(&self) -> DenseTensor {
        match self {
            Tensor::F32(t) | Tensor::F16(t) => t.clone(),
            Tensor::Q4(q) => qtensor::dequantize(q),
        }
    }

    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            Tensor::F32(t) | Tensor::F16(t) => t.matvec(x),
            Tensor::Q4(q) => qtensor::qmatvec(q, x),
        }
    }

    /// Row `r` of a 2-D tensor as f32.
    pub fn row(&self, r: usize) -> Vec<f32> {
        match self {
            Tensor::F32(t) | Tensor::F16(t) => t.row(r).to_vec(),
            Tensor::Q4(q) => q.dequantize_row(r),
        }
    }

    /// Raw little-endian payload bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Tensor::F32(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
            Tensor::F16(t) => t
                .data()
                .iter()
                .flat_map(|v| f16::from_f32(*v).to_bits().to_le_bytes())
                .collect(),
            Tensor::Q4(q) => q.to_bytes(),
        }
    }

    pub fn byte_len(&self) -> usize {
        byte_len(self.dtype(), &self.dims())
    }

    pub fn from_bytes(dtype: DType, dims: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let expected = byte_len(dtype, &dims);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{} tensor {dims:?} needs {expected} bytes, got {}",
                dtype.name(),
                bytes.len()
            )));
        }
        Ok(match dtype {
            DType::F32 => Tensor::F32(DenseTensor::new(
                dims,
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )?),
            DType::F16 => Tensor::F16(DenseTensor::new(
                dims,
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f32())
                    .collect(),
            )?),
            DType::Q4 => match dims[..] {
                [r, c] => Tensor::Q4(QTensor::from_bytes(r, c, bytes)?),
                _ => return Err(Error::Format(format!("q4 tensor must be 2-D, got {dims:?}"))),
            },
        })
    }
}

/// Bytes a tensor of `dims` takes at `dtype`.
pub fn byte_len(dtype: DType, dims: &[usize]) -> usize {
    let n: usize = dims.iter().product();
    match dtype {
        DType::F32 => n * 4,
        DType::F16 => n * 2,
        DType::Q4 => match dims {
            [r, c] => qtensor::q4_byte_len(*r, *c),
            _ => 0,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln_attn: LayerNorm,
    pub ln_mlp: LayerNorm,
    /// `[3 * d_model, d_model]`: query rows, then key rows, then value rows.
    pub qkv: Tensor,
    pub attn_out: Tensor,
    pub mlp_up: Tensor,
    pub mlp_down: Tensor,
}

/// The full tensor set of a decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub embed: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm: LayerNorm,
    pub unembed: Tensor,
}

pub const EMBED: &str = "embed_in.weight";
pub const UNEMBED: &str = "embed_out.weight";
pub const FINAL_NORM: &str = "final_layer_norm";

pub fn qkv_name(layer: usize) -> String {
    format!("layers.{layer}.attention.query_key_value.weight")
}

pub fn attn_out_name(layer: usize) -> String {
    format!("layers.{layer}.attention.dense.weight")
}

pub fn mlp_up_name(layer: usize) -> String {
    format!("layers.{layer}.mlp.dense_h_to_4h.weight")
}

pub fn mlp_down_name(layer: usize) -> String {
    format!("layers.{layer}.mlp.dense_4h_to_h.weight")
}

fn ln_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.weight"), format!("{prefix}.bias"))
}

/// Canonical names and dims for `config`, in file order, without
/// allocating any weights.
pub fn tensor_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, v, m) = (config.d_model, config.vocab_size, config.mlp_dim());
    let mut out = vec![(EMBED.to_string(), vec![v, d])];
    for i in 0..config.n_layers {
        for norm in ["input_layernorm", "post_attention_layernorm"] {
            let (g, b) = ln_names(&format!("layers.{i}.{norm}"));
            out.push((g, vec![d]));
            out.push((b, vec![d]));
        }
        out.push((qkv_name(i), vec![3 * d, d]));
        out.push((attn_out_name(i), vec![d, d]));
        out.push((mlp_up_name(i), vec![m, d]));
        out.push((mlp_down_name(i), vec![d, m]));
    }
    let (g, b) = ln_names(FINAL_NORM);
    out.push((g, vec![d]));
    out.push((b, vec![d]));
    out.push((UNEMBED.to_string(), vec![v, d]));
    out
}

impl ModelWeights {
    /// All tensors, keyed by their canonical names, in file order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![(EMBED.to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            let (g, b) = ln_names(&format!("layers.{i}.input_layernorm"));
            out.push((g, &l.ln_attn.gain));
            out.push((b, &l.ln_attn.bias));
            let (g, b) = ln_names(&format!("layers.{i}.post_attention_layernorm"));
            out.push((g, &l.ln_mlp.gain));
            out.push((b, &l.ln_mlp.bias));
            out.push((qkv_name(i), &l.qkv));
            out.push((attn_out_name(i), &l.attn_out));
            out.push((mlp_up_name(i), &l.mlp_up));
            out.push((mlp_down_name(i), &l.mlp_down));
        }
        let (g, b) = ln_names(FINAL_NORM);
        out.push((g, &self.final_norm.gain));
        out.push((b, &self.final_norm.bias));
        out.push((UNEMBED.to_string(), &self.unembed));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named_tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if name == EMBED {
            return Some(&mut self.embed);
        }
        if name == UNEMBED {
            return Some(&mut self.unembed);
        }
        let (g, b) = ln_names(FINAL_NORM);
        if name == g {
            return Some(&mut self.final_norm.gain);
        }
        if name == b {
            return Some(&mut self.final_norm.bias);
        }
        let rest = name.strip_prefix("layers.")?;
        let (idx, field) = rest.split_once('.')?;
        let layer = self.layers.get_mut(idx.parse::<usize>().ok()?)?;
        match field {
            "input_layernorm.weight" => Some(&mut layer.ln_attn.gain),
            "input_layernorm.bias" => Some(&mut layer.ln_attn.bias),
            "post_attention_layernorm.weight" => Some(&mut layer.ln_mlp.gain),
            "post_attention_layernorm.bias" => Some(&mut layer.ln_mlp.bias),
            "attention.query_key_value.weight" => Some(&mut layer.qkv),
            "attention.dense.weight" => Some(&mut layer.attn_out),
            "mlp.dense_h_to_4h.weight" => Some(&mut layer.mlp_up),
            "mlp.dense_4h_to_h.weight" => Some(&mut layer.mlp_down),
            _ => None,
        }
    }

    /// Rebuilds the typed structure from a name map, checking every shape
    /// against `config`.
    pub fn from_named(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let take = |tensors: &mut BTreeMap<String, Tensor>, name: &str, dims: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            if t.dims() != dims {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has dims {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
            Ok(t)
        };
        let take_ln = |tensors: &mut BTreeMap<String, Tensor>, prefix: &str| -> Result<LayerNorm> {
            let (g, b) = ln_names(prefix);
            Ok(LayerNorm {
                gain: take(tensors, &g, &[d])?,
                bias: take(tensors, &b, &[d])?,
            })
        };
        let embed = take(&mut tensors, EMBED, &[config.vocab_size, d])?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let ln_attn = take_ln(&mut tensors, &format!("layers.{i}.input_layernorm"))?;
            let ln_mlp = take_ln(&mut tensors, &format!("layers.{i}.post_attention_layernorm"))?;
            layers.push(LayerWeights {
                ln_attn,
                ln_mlp,
                qkv: take(&mut tensors, &qkv_name(i), &[3 * d, d])?,
                attn_out: take(&mut tensors, &attn_out_name(i), &[d, d])?,
                mlp_up: take(&mut tensors, &mlp_up_name(i), &[config.mlp_dim(), d])?,
                mlp_down: take(&mut tensors, &mlp_down_name(i), &[d, config.mlp_dim()])?,
            });
        }
        let final_norm = take_ln(&mut tensors, FINAL_NORM)?;
        let unembed = take(&mut tensors, UNEMBED, &[config.vocab_size, d])?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor `{extra}`")));
        }
        Ok(ModelWeights {
            embed,
            layers,
            final_norm,
            unembed,
        })
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Checks every tensor shape against `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        ModelWeights::from_named(config, self.clone().into_named()).map(|_| ())
    }

    /// Replaces every tensor by its dense f32 copy.
    pub fn to_dense(&self) -> ModelWeights {
        self.map(|_, t| Tensor::F32(t.to_dense()))
    }

    /// Applies `f` to every tensor, keeping structure.
    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> ModelWeights {
        let mut out = self.clone();
        for (name, t) in self.named_tensors() {
            *out.get_mut(&name).expect("canonical name") = f(&name, t);
        }
        out
    }

    /// All-zero weights with unit layernorm gains.
    pub fn zeros(config: &ModelConfig) -> ModelWeights {
        let d = config.d_model;
        let z = |dims: Vec<usize>| Tensor::F32(DenseTensor::zeros(dims));
        let ln = || LayerNorm {
            gain: Tensor::F32(DenseTensor::new(vec![d], vec![1.0; d]).unwrap()),
            bias: z(vec![d]),
        };
        ModelWeights {
            embed: z(vec![config.vocab_size, d]),
            layers: (0..config.n_layers)
                .map(|_| LayerWeights {
                    ln_attn: ln(),
                    ln_mlp: ln(),
                    qkv: z(vec![3 * d, d]),
                    attn_out: z(vec![d, d]),
                    mlp_up: z(vec![config.mlp_dim(), d]),
                    mlp_down: z(vec![d, config.mlp_dim()]),
                })
                .collect(),
            final_norm: ln(),
            unembed: z(vec![config.vocab_size, d]),
        }
    }

    /// Seeded random weights: projections ~ U(-a, a) with `a = 1/sqrt(fan_in)`,
    /// embeddings ~ U(-1, 1), layernorm gains near 1 and biases near 0.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ModelWeights::zeros(config);
        for (name, t) in ModelWeights::zeros(config).named_tensors() {
            let dims = t.dims();
            let n: usize = dims.iter().product();
            let data: Vec<f32> = if dims.len() == 1 {
                if name.ends_with(".weight") {
                    (0..n).map(|_| 1.0 + rng.gen_range(-0.1..0.1)).collect()
                } else {
                    (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
                }
            } else if name == EMBED {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            } else {
                let a = 1.0 / (dims[1] as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            *out.get_mut(&name).unwrap() = Tensor::F32(DenseTensor::new(dims, data)?);
        }
        Ok(out)
    }
}
