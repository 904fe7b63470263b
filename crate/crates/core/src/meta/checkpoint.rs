//! Binary checkpoint container.
//!
//! Layout: the magic bytes `MISECKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor's
//! values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tensor};
use crate::tagging::tag_mapping;

use super::config::TrainConfig;
use super::model::{ModelConfig, Tagger};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MISECKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Init,
    Meta,
    Scratch,
    Inheritor,
    Finetuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ModelKind,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tags: Vec<(String, usize)>,
    pub vocabulary: Option<Vocabulary>,
    pub provenance: Provenance,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    train: TrainConfig,
    tags: Vec<(String, usize)>,
    vocabulary: Option<Vocabulary>,
    provenance: Provenance,
    tensors: Vec<(String, Vec<usize>)>,
}

impl ModelCheckpoint {
    pub fn new(
        model: ModelConfig,
        train: TrainConfig,
        vocabulary: Option<Vocabulary>,
        provenance: Provenance,
        params: ParamSet,
    ) -> Result<Self> {
        let ckpt = ModelCheckpoint {
            model,
            train,
            tags: tag_mapping(),
            vocabulary,
            provenance,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn tagger(&self) -> Tagger {
        Tagger::new(self.model)
    }

    /// Parameters must have exactly the layout a fresh model would have.
    fn validate(&self) -> Result<()> {
        if self.tags != tag_mapping() {
            return Err(Error::Checkpoint(format!("unexpected tag mapping {:?}", self.tags)));
        }
        let reference = self.tagger().init_params(0)?;
        self.params
            .check_same_layout(&reference)
            .map_err(|e| Error::Checkpoint(format!("parameters do not match the model config: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model,
            train: self.train,
            tags: self.tags.clone(),
            vocabulary: self.vocabulary.clone(),
            provenance: self.provenance,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Checkpoint("truncated checkpoint".into());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(body.get(..header_len).ok_or_else(truncated)?)?;
        let mut data = body[header_len..].chunks_exact(8);
        if !data.remainder().is_empty() {
            return Err(truncated());
        }
        let mut params = ParamSet::new();
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = data
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.len() != n {
                return Err(truncated());
            }
            params.insert(name, Tensor::new(shape, values)?)?;
        }
        if data.next().is_some() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }
        let ckpt = ModelCheckpoint {
            model: header.model,
            train: header.train,
            tags: header.tags,
            vocabulary: header.vocabulary,
            provenance: header.provenance,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
