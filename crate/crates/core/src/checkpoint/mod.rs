//! Checkpoints stored in the safetensors container with a JSON config sidecar.

mod config;
mod container;
mod layers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::ParameterVector;

pub use config::{config_path_for, ModelConfig};
pub use container::{decode_container, encode_container};
pub use layers::{
    extract_layer_bundle, parse_layer_index, LayerBundle, LayerNameTemplate, EMBED_TOKENS,
    FINAL_NORM, LLAMA_BLOCK_SUFFIXES, OUTPUT_HEAD,
};

/// Element types the tool can decode. Other safetensors dtypes are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    /// Name as written in the container header.
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F64 => "F64",
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "F64" => Ok(Dtype::F64),
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    /// Decodes little-endian elements. `bytes.len()` must be a multiple of
    /// [`Dtype::size`].
    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            Dtype::BF16 => bytes
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
        }
    }

    /// Encodes with round-to-nearest-even into this dtype.
    pub fn encode(self, values: &[f64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len() * self.size());
        for &v in values {
            match self {
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F16 => out.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
                Dtype::BF16 => out.extend_from_slice(&bf16::from_f64(v).to_le_bytes()),
            }
        }
        out
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dtype::parse(&s.to_ascii_uppercase())
    }
}

/// Raw tensor payload as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected = shape
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::InvalidTensor {
                name: String::new(),
                reason: format!(
                    "{} bytes for {dtype} shape {shape:?} (expected {expected})",
                    data.len()
                ),
            });
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn from_f64(dtype: Dtype, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dtype, shape, dtype.encode(values))
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.dtype.decode(&self.data)
    }

    pub fn to_parameter_vector(&self, name: &str) -> Result<ParameterVector> {
        let values = self.to_f64();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("tensor `{name}`")));
        }
        ParameterVector::new(name, values, self.dtype, self.shape.clone())
    }

    pub fn from_parameter_vector(v: &ParameterVector) -> Result<Self> {
        Self::from_f64(v.source_dtype, v.shape.clone(), &v.values)
    }
}

/// A full model: tensors ordered by name, an optional config sidecar and any
/// free-form string metadata from the container header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub config: Option<ModelConfig>,
    pub metadata: Option<BTreeMap<String, String>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Distinct block indices found in tensor names, ascending.
    pub fn block_indices(&self, template: &LayerNameTemplate) -> BTreeSet<usize> {
        self.tensors
            .keys()
            .filter_map(|name| template.parse(name).map(|(i, _)| i))
            .collect()
    }

    /// Number of blocks, requiring indices to run `0..n` without gaps.
    pub fn block_count(&self, template: &LayerNameTemplate) -> Result<usize> {
        let indices = self.block_indices(template);
        if indices.iter().copied().eq(0..indices.len()) {
            Ok(indices.len())
        } else {
            Err(Error::NonContiguousLayers(indices.into_iter().collect()))
        }
    }

    /// Checks the config's layer count against the tensor names.
    pub fn validate_layer_count(&self, template: &LayerNameTemplate) -> Result<usize> {
        let blocks = self.block_count(template)?;
        match &self.config {
            Some(cfg) if cfg.num_hidden_layers != blocks => Err(Error::LayerCountMismatch {
                config: cfg.num_hidden_layers,
                tensors: blocks,
            }),
            _ => Ok(blocks),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_container(&self.tensors, self.metadata.as_ref())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tensors, metadata) = decode_container(bytes)?;
        Ok(Self { tensors, config: None, metadata })
    }
}

/// Reads a container file and, when present, its config sidecar.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ckpt = Checkpoint::from_bytes(&bytes)?;
    ckpt.config = ModelConfig::load_sidecar(path)?;
    Ok(ckpt)
}

/// Writes the container (tensors in name order, contiguous payload) and the
/// config sidecar when the checkpoint carries one.
pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    if let Some(cfg) = &ckpt.config {
        cfg.save(config_path_for(path))?;
    }
    Ok(())
}
