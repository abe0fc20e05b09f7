//! Model checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SSDM" | version u16 | header_len u32 | header JSON {config, meta}
//! | tensor_count u32
//! | per tensor: name_len u16 | name | ndim u8 | dims u32 * ndim | values f32 * prod(dims)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SmallCnn, SmallCnnConfig, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSDM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub experiment: String,
    pub fold: Option<usize>,
    /// 1-based epoch the weights come from; 0 for an untrained model.
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    pub config_hash: String,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SmallCnnConfig,
    pub weights: BTreeMap<String, Tensor<f32>>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SmallCnnConfig,
    meta: TrainingMeta,
}

fn ser(e: std::io::Error) -> Error {
    Error::Serialization(e.to_string())
}

impl Checkpoint {
    pub fn from_model(model: &SmallCnn<f32>, meta: TrainingMeta) -> Self {
        let cfg = model.config().clone();
        let weights = cfg
            .param_specs()
            .into_iter()
            .zip(model.params())
            .map(|(spec, p)| {
                let t = Tensor::new(spec.shape, p.clone()).expect("model params match specs");
                (spec.name, t)
            })
            .collect();
        Self {
            config: cfg,
            weights,
            meta,
        }
    }

    /// Rebuilds the model; every parameter in the inventory must be present
    /// with its declared shape, and nothing else.
    pub fn model(&self) -> Result<SmallCnn<f32>> {
        let specs = self.config.param_specs();
        if specs.len() != self.weights.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, config declares {}",
                self.weights.len(),
                specs.len()
            )));
        }
        let params = specs
            .iter()
            .map(|s| {
                let t = self
                    .weights
                    .get(&s.name)
                    .ok_or_else(|| Error::Validation(format!("checkpoint lacks {}", s.name)))?;
                if t.shape() != s.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "{} has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )));
                }
                Ok(t.data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        SmallCnn::from_params(self.config.clone(), params)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
        })?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for (name, t) in &self.weights {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(ser)
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(ser)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Serialization("not an SSDM checkpoint".into()));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(Error::Serialization(format!("unsupported SSDM version {version}")));
        }
        let hlen = cur.u32()? as usize;
        let header: Header = serde_json::from_slice(cur.take(hlen)?)?;
        let count = cur.u32()? as usize;
        let mut weights = BTreeMap::new();
        for _ in 0..count {
            let nlen = usize::from(cur.u16()?);
            let name = std::str::from_utf8(cur.take(nlen)?)
                .map_err(|e| Error::Serialization(e.to_string()))?
                .to_string();
            let ndim = usize::from(cur.take(1)?[0]);
            let shape = (0..ndim)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = cur
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if weights.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Serialization(format!("tensor {name} appears twice")));
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Serialization("trailing bytes after tensor table".into()));
        }
        let ckpt = Checkpoint {
            config: header.config,
            weights,
            meta: header.meta,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Serialization("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
