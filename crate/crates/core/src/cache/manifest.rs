use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F16,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> u64 {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F16 => "f16",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f16" => Ok(Dtype::F16),
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            _ => Err(crate::error::invalid(format!("unknown dtype `{s}`"))),
        }
    }
}

/// One stored tensor. `offset`, `length` and `crc32` are filled in by the
/// writer; offsets are relative to the start of the payload region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    #[serde(default)]
    pub offset: u64,
    #[serde(default)]
    pub length: u64,
    #[serde(default)]
    pub crc32: u32,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, dtype: Dtype) -> Self {
        Self { name: name.into(), shape, dtype, offset: 0, length: 0, crc32: 0 }
    }

    pub fn numel(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn expected_length(&self) -> u64 {
        self.numel() * self.dtype.size()
    }
}

/// Archive metadata. The archive-wide checksum lives in the file trailer,
/// not here, since the manifest is itself covered by it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version_hash: String,
    pub dataset_id: String,
    pub task_id: String,
    pub big_brain_id: String,
    pub tokenizer_id: String,
    pub prompt_id: String,
    pub prompt_hash: String,
    pub layers: Vec<String>,
    pub n_context: usize,
    pub d_model: usize,
    pub k_chunk: usize,
    #[serde(default)]
    pub camera_calib: Option<String>,
    #[serde(default)]
    pub roi_meta: BTreeMap<String, String>,
    /// UTC seconds.
    pub timestamp: u64,
    #[serde(default)]
    pub dependencies: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

impl CacheManifest {
    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }
}
