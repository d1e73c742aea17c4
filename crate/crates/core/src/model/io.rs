//! Binary model container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LADB"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     header length H in bytes, u64 little-endian
//! 16      H     header: UTF-8 JSON object with sorted keys
//!               { "kind", "meta", "tensors": [ {name, dtype, shape, offset, nbytes} ] }
//! 16+H    ...   tensor payloads, little-endian, in directory order;
//!               `offset` is relative to the start of the payload section
//! ```
//!
//! `dtype` is one of `f32`, `i8`, `i32`. The same container holds float
//! models (`kind = "float"`) and quantized models (`kind = "int8"`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Model, ModelConfig, ParamStore};
use crate::dataset::ScalerParams;
use crate::error::{Error, Result};
use crate::features::FEATURE_COLUMNS;
use crate::neural::{BatchNormState, Tensor};

pub const MAGIC: &[u8; 4] = b"LADB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl Payload {
    pub fn dtype(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::I8(_) => "i8",
            Payload::I32(_) => "i32",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
            Payload::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nbytes(&self) -> usize {
        match self {
            Payload::F32(v) => v.len() * 4,
            Payload::I8(v) => v.len(),
            Payload::I32(v) => v.len() * 4,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I8(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::I32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read(dtype: &str, bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format {
            section: "tensor directory",
            msg: m,
        };
        match dtype {
            "f32" | "i32" if !bytes.len().is_multiple_of(4) => {
                Err(bad(format!("{dtype} payload of {} bytes", bytes.len())))
            }
            "f32" => Ok(Payload::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )),
            "i32" => Ok(Payload::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )),
            "i8" => Ok(Payload::I8(bytes.iter().map(|&b| b as i8).collect())),
            other => Err(bad(format!("unknown dtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    tensors: Vec<DirEntry>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<StoredTensor>,
}

impl Container {
    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(|t| t.payload.nbytes()).sum()
    }

    pub fn take(&mut self, name: &str) -> Option<StoredTensor> {
        let i = self.tensors.iter().position(|t| t.name == name)?;
        Some(self.tensors.remove(i))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut dir = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.payload.len() {
                return Err(Error::Internal(format!(
                    "tensor {} shape {:?} vs {} values",
                    t.name,
                    t.shape,
                    t.payload.len()
                )));
            }
            dir.push(DirEntry {
                name: t.name.clone(),
                dtype: t.payload.dtype().into(),
                shape: t.shape.clone(),
                offset,
                nbytes: t.payload.nbytes(),
            });
            offset += t.payload.nbytes();
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: dir,
        };
        // through Value so object keys come out sorted
        let header = serde_json::to_vec(&serde_json::to_value(&header)?)?;
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            t.payload.write(&mut out);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format {
                section: "magic",
                msg: "not a LADB model file".into(),
            });
        }
        if bytes.len() < 8 {
            return Err(Error::Format {
                section: "version",
                msg: "file truncated".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format {
                section: "version",
                msg: format!("unsupported version {version}"),
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Format {
                section: "header",
                msg: "file truncated before header length".into(),
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or(Error::Format {
                section: "header",
                msg: format!("header length {hlen} exceeds file size"),
            })?;
        let header: Header =
            serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Format {
                section: "header",
                msg: e.to_string(),
            })?;
        let payload = &bytes[body..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for e in header.tensors {
            let end = e.offset.saturating_add(e.nbytes);
            if e.offset != expected_offset || end > payload.len() {
                return Err(Error::Format {
                    section: "payload",
                    msg: format!("tensor {} truncated or misplaced", e.name),
                });
            }
            let p = Payload::read(&e.dtype, &payload[e.offset..end])?;
            if p.len() != e.shape.iter().product::<usize>() {
                return Err(Error::Format {
                    section: "tensor directory",
                    msg: format!(
                        "tensor {} shape {:?} vs {} values",
                        e.name,
                        e.shape,
                        p.len()
                    ),
                });
            }
            expected_offset = end;
            tensors.push(StoredTensor {
                name: e.name,
                shape: e.shape,
                payload: p,
            });
        }
        if expected_offset != payload.len() {
            return Err(Error::Format {
                section: "payload",
                msg: format!("{} trailing bytes", payload.len() - expected_offset),
            });
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FloatMeta {
    config: ModelConfig,
    folded: bool,
    feature_columns: Vec<String>,
    scaler: Option<ScalerParams>,
    bn_layers: Vec<String>,
}

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

impl Model {
    pub fn to_container(&self) -> Result<Container> {
        let mut tensors: Vec<StoredTensor> = self
            .params()
            .iter()
            .map(|(n, t)| StoredTensor {
                name: n.to_string(),
                shape: t.shape().to_vec(),
                payload: Payload::F32(t.data().to_vec()),
            })
            .collect();
        for (name, st) in self.bn_states() {
            for (suffix, v) in [
                (RUNNING_MEAN, &st.running_mean),
                (RUNNING_VAR, &st.running_var),
            ] {
                tensors.push(StoredTensor {
                    name: format!("{name}{suffix}"),
                    shape: vec![v.len()],
                    payload: Payload::F32(v.clone()),
                });
            }
        }
        let meta = FloatMeta {
            config: self.config.clone(),
            folded: self.is_folded(),
            feature_columns: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            scaler: self.scaler.clone(),
            bn_layers: self.bn_states().iter().map(|(n, _)| n.clone()).collect(),
        };
        Ok(Container {
            kind: "float".into(),
            meta: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        if c.kind != "float" {
            return Err(Error::Format {
                section: "header",
                msg: format!("expected a float model, found kind {:?}", c.kind),
            });
        }
        let meta: FloatMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format {
                section: "header",
                msg: e.to_string(),
            })?;
        if meta.feature_columns != FEATURE_COLUMNS {
            return Err(Error::Format {
                section: "header",
                msg: "feature column order differs from this build".into(),
            });
        }
        if let Some(s) = &meta.scaler {
            s.validate()?;
        }
        let mut bn = Vec::new();
        for name in &meta.bn_layers {
            let mut grab = |suffix: &str| -> Result<Vec<f32>> {
                match c.take(&format!("{name}{suffix}")).map(|t| t.payload) {
                    Some(Payload::F32(v)) => Ok(v),
                    _ => Err(Error::Format {
                        section: "tensor directory",
                        msg: format!("missing f32 tensor {name}{suffix}"),
                    }),
                }
            };
            let running_mean = grab(RUNNING_MEAN)?;
            let running_var = grab(RUNNING_VAR)?;
            bn.push((
                name.clone(),
                BatchNormState {
                    running_mean,
                    running_var,
                },
            ));
        }
        let mut params = ParamStore::default();
        for t in c.tensors {
            let Payload::F32(v) = t.payload else {
                return Err(Error::Format {
                    section: "tensor directory",
                    msg: format!("tensor {} is not f32", t.name),
                });
            };
            params.insert(t.name, Tensor::new(t.shape, v)?);
        }
        Model::from_parts(meta.config, params, bn, meta.scaler, meta.folded)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}
