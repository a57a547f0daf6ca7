//! LoRA adapters and the dialogue dataset pipeline.

mod dataset;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    pad_batch, read_jsonl, render_dialogue, render_turn, split_dataset, write_jsonl,
    DialogueSample, PaddedBatch, Speaker, Turn,
};

use crate::error::{Error, Result};
use crate::modelfile::{AdapterHeader, ModelFile};
use crate::qtensor::DenseTensor;
use crate::transformer::{qkv_name, ModelConfig, ModelWeights, Tensor};

const A_SUFFIX: &str = ".lora_a";
const B_SUFFIX: &str = ".lora_b";

/// Low-rank factors for one base tensor: `A` is `[r, cols]`, `B` is `[rows, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    pub a: DenseTensor,
    pub b: DenseTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f32,
    pub targets: BTreeMap<String, LoraPair>,
}

/// The fused QKV projection of every layer.
pub fn default_targets(config: &ModelConfig) -> Vec<String> {
    (0..config.n_layers).map(qkv_name).collect()
}

impl LoraAdapter {
    pub fn scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    /// Checks rank and that every pair is `[r, c]` / `[rows, r]`.
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidValue("adapter rank must be at least 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidValue(format!("adapter alpha {} is not finite", self.alpha)));
        }
        for (name, p) in &self.targets {
            let (ar, _) = p.a.shape2()?;
            let (_, bc) = p.b.shape2()?;
            if ar != self.rank || bc != self.rank {
                return Err(Error::Shape(format!(
                    "adapter `{name}`: A {:?} and B {:?} do not have rank {}",
                    p.a.dims(),
                    p.b.dims(),
                    self.rank
                )));
            }
        }
        Ok(())
    }

    /// Seeded uniform init for tests and demos. `B` starts at zero
    /// when `zero_b` is set, as in freshly initialized LoRA.
    pub fn random(
        base: &ModelWeights,
        targets: &[String],
        rank: usize,
        alpha: f32,
        seed: u64,
        zero_b: bool,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = BTreeMap::new();
        for name in targets {
            let t = base
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            let (rows, cols) = match t.dims()[..] {
                [r, c] => (r, c),
                _ => return Err(Error::Shape(format!("target `{name}` is not 2-D"))),
            };
            let a = (0..rank * cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let b = (0..rows * rank)
                .map(|_| if zero_b { 0.0 } else { rng.gen_range(-0.5..0.5) })
                .collect();
            out.insert(
                name.clone(),
                LoraPair {
                    a: DenseTensor::new(vec![rank, cols], a)?,
                    b: DenseTensor::new(vec![rows, rank], b)?,
                },
            );
        }
        let adapter = LoraAdapter {
            rank,
            alpha,
            targets: out,
        };
        adapter.validate()?;
        Ok(adapter)
    }

    /// `(alpha / r) · B·A` for one target.
    pub fn delta(&self, name: &str) -> Result<DenseTensor> {
        let p = self
            .targets
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let (rows, r) = p.b.shape2()?;
        let (_, cols) = p.a.shape2()?;
        let s = self.scale();
        let mut out = vec![0.0f32; rows * cols];
        for i in 0..rows {
            let brow = p.b.row(i);
            for j in 0..cols {
                let mut acc = 0.0f32;
                for (k, &bk) in brow.iter().enumerate().take(r) {
                    acc += bk * p.a.data()[k * cols + j];
                }
                out[i * cols + j] = s * acc;
            }
        }
        DenseTensor::new(vec![rows, cols], out)
    }

    pub fn to_file(&self) -> Result<ModelFile> {
        self.validate()?;
        let mut tensors = Vec::new();
        for (name, p) in &self.targets {
            tensors.push((format!("{name}{A_SUFFIX}"), Tensor::F32(p.a.clone())));
            tensors.push((format!("{name}{B_SUFFIX}"), Tensor::F32(p.b.clone())));
        }
        Ok(ModelFile {
            config: None,
            adapter: Some(AdapterHeader {
                rank: u32::try_from(self.rank)
                    .map_err(|_| Error::InvalidValue("adapter rank exceeds u32".into()))?,
                alpha: self.alpha,
            }),
            vocab: None,
            tensors,
        })
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let header = file
            .adapter
            .ok_or_else(|| Error::Format("model file where an adapter was expected".into()))?;
        let mut a_parts = BTreeMap::new();
        let mut b_parts = BTreeMap::new();
        for (name, t) in file.tensors {
            let dense = t.to_dense();
            if let Some(base) = name.strip_suffix(A_SUFFIX) {
                a_parts.insert(base.to_string(), dense);
            } else if let Some(base) = name.strip_suffix(B_SUFFIX) {
                b_parts.insert(base.to_string(), dense);
            } else {
                return Err(Error::Format(format!("unexpected adapter tensor `{name}`")));
            }
        }
        let mut targets = BTreeMap::new();
        for (name, a) in a_parts {
            let b = b_parts
                .remove(&name)
                .ok_or_else(|| Error::MissingTensor(format!("{name}{B_SUFFIX}")))?;
            targets.insert(name, LoraPair { a, b });
        }
        if let Some(name) = b_parts.into_keys().next() {
            return Err(Error::MissingTensor(format!("{name}{A_SUFFIX}")));
        }
        let adapter = LoraAdapter {
            rank: header.rank as usize,
            alpha: header.alpha,
            targets,
        };
        adapter.validate()?;
        Ok(adapter)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file()?.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(crate::modelfile::read_file(path)?)
    }
}

/// Folds the adapter into `base`: each target becomes the dense
/// `W + (alpha / r) · B·A`; every other tensor is returned untouched.
pub fn merge_lora(base: &ModelWeights, adapter: &LoraAdapter) -> Result<ModelWeights> {
    adapter.validate()?;
    let mut out = base.clone();
    for name in adapter.targets.keys() {
        let w = base
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?
            .to_dense();
        let (rows, cols) = w.shape2()?;
        let p = &adapter.targets[name];
        if p.a.dims() != [adapter.rank, cols] || p.b.dims() != [rows, adapter.rank] {
            return Err(Error::Shape(format!(
                "adapter for `{name}` is A {:?}, B {:?} but the base tensor is [{rows}, {cols}]",
                p.a.dims(),
                p.b.dims()
            )));
        }
        let delta = adapter.delta(name)?;
        let data = w
            .data()
            .iter()
            .zip(delta.data())
            .map(|(x, d)| x + d)
            .collect();
        *out.get_mut(name).expect("checked above") =
            Tensor::F32(DenseTensor::new(vec![rows, cols], data)?);
    }
    Ok(out)
}
