//! Checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "JSPCKPT1"
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (CheckpointHeader)
//! n_tensors  u32
//! per tensor, in name order:
//!   name_len u32, name bytes (UTF-8)
//!   ndim u32, dims u64 × ndim
//!   data f32 × prod(dims), row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelConfig, ModelError, ParamStore, Result, Vocab};
use crate::audio::MelConfig;
use crate::corpus::TrainedOn;

const MAGIC: &[u8; 8] = b"JSPCKPT1";
pub const FORMAT_VERSION: u32 = 1;

/// Where a checkpoint came from; used for leakage checks at evaluation time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub fold: Option<usize>,
    #[serde(default)]
    pub test_speaker: Option<String>,
    #[serde(default)]
    pub train_speakers: Vec<String>,
    #[serde(default)]
    pub trained_on: Option<TrainedOn>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub mel: Option<MelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub architecture: Architecture,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub config_hash: String,
    #[serde(default)]
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config_hash: impl Into<String>, meta: CheckpointMeta) -> Self {
        Self {
            header: CheckpointHeader {
                version: FORMAT_VERSION,
                architecture: model.arch,
                model: model.config.clone(),
                vocab: model.vocab.tokens().to_vec(),
                config_hash: config_hash.into(),
                meta,
            },
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model, validating every tensor shape.
    pub fn into_model(self) -> Result<Model> {
        let vocab = Vocab::default();
        if self.header.vocab != vocab.tokens() {
            return Err(ModelError::Checkpoint("vocabulary differs from the built-in one".into()));
        }
        self.params
            .validate(self.header.architecture, &self.header.model, vocab.len())?;
        Ok(Model {
            arch: self.header.architecture,
            config: self.header.model,
            vocab,
            params: self.params,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let n = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| ModelError::Checkpoint("non-UTF-8 tensor name".into()))?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims.as_slice() {
                [c] => (1, *c),
                [rr, c] => (*rr, *c),
                _ => return Err(ModelError::Checkpoint(format!("{name}: unsupported rank {ndim}"))),
            };
            let data = r.take(rows * cols * 4)?;
            let values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            header,
            params: ParamStore::from_map(tensors),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| ModelError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(path, self.to_bytes()).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| ModelError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
