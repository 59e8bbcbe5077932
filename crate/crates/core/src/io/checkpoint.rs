//! Checkpoint container.
//!
//! ```text
//! 8 bytes   magic "NIBKIT01"
//! 8 bytes   header length L (u64, little endian)
//! L bytes   JSON header: format version, model config, optimizer settings,
//!           training step and a table of tensors (name, shape, byte offset)
//! ...       payload: little-endian f32 values, offsets relative to its start
//! ```
//!
//! Tensors are located through explicit offsets, so a single parameter can be
//! read without decoding the rest ([`load_param`]).

use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{OptimizerKind, OptimizerState, ParamStore, Shape, Tensor};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelConfig};
use crate::nib::NoiseSpec;

pub const MAGIC: &[u8; 8] = b"NIBKIT01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    /// Completed training steps.
    pub step: u64,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, optimizer: Option<&OptimizerState<f32>>, step: u64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
            step,
        }
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.config.nib.as_ref().map(|n| &n.noise)
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = build_model::<f32>(&self.config)?;
        model
            .load_params(self.params.clone())
            .map_err(|e| Error::CheckpointInconsistent {
                name: "<model>".into(),
                detail: e.to_string(),
            })?;
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: [usize; 4],
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub step: u64,
    pub config: ModelConfig,
    /// Copy of the NIB noise spec for readers that skip the model config.
    pub noise: Option<NoiseSpec>,
    pub optimizer: Option<OptimizerHeader>,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, role, t: &Tensor<f32>| {
        entries.push(TensorEntry {
            name: name.to_string(),
            role,
            shape: t.shape().dims(),
            offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in ckpt.params.iter() {
        push(name, TensorRole::Param, t);
    }
    if let Some(opt) = &ckpt.optimizer {
        if !opt.moments.is_empty() && opt.moments.len() != ckpt.params.len() {
            return Err(Error::invalid(
                "save_checkpoint",
                format!("{} moment pairs for {} parameters", opt.moments.len(), ckpt.params.len()),
            ));
        }
        for (i, (m, v)) in opt.moments.iter().enumerate() {
            push(ckpt.params.name(i), TensorRole::AdamM, m);
            push(ckpt.params.name(i), TensorRole::AdamV, v);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        step: ckpt.step,
        config: ckpt.config.clone(),
        noise: ckpt.noise().copied(),
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerHeader {
            kind: o.kind,
            lr: o.lr,
            step: o.step,
        }),
        tensors: entries,
        payload_bytes: payload.len() as u64,
    };
    let json = serde_json::to_vec_pretty(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn parse_header(bytes: &[u8], total_len: usize) -> Result<(Header, usize)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::CheckpointMagic(bytes[..bytes.len().min(8)].to_vec()));
    }
    if bytes.len() < 16 {
        return Err(Error::CheckpointTruncated {
            needed: 16,
            actual: total_len,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.saturating_add(hlen);
    if bytes.len() < payload_start {
        return Err(Error::CheckpointTruncated {
            needed: payload_start,
            actual: total_len,
        });
    }
    // Check the version before the full schema so that future layouts fail cleanly.
    let raw: serde_json::Value = serde_json::from_slice(&bytes[16..payload_start])?;
    let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw)?;
    let needed = payload_start + header.payload_bytes as usize;
    if total_len < needed {
        return Err(Error::CheckpointTruncated {
            needed,
            actual: total_len,
        });
    }
    if total_len > needed {
        return Err(Error::CheckpointInconsistent {
            name: "<payload>".into(),
            detail: format!("{} trailing bytes after the payload", total_len - needed),
        });
    }
    Ok((header, payload_start))
}

fn check_entry(e: &TensorEntry, payload_bytes: u64) -> Result<(usize, usize)> {
    let len = Shape::from(e.shape).numel();
    let end = e.offset.checked_add(4 * len as u64);
    match end {
        Some(end) if end <= payload_bytes && e.offset % 4 == 0 => Ok((e.offset as usize, len)),
        _ => Err(Error::CheckpointInconsistent {
            name: e.name.clone(),
            detail: format!(
                "shape {:?} at offset {} does not fit a {payload_bytes}-byte payload",
                e.shape, e.offset
            ),
        }),
    }
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, start) = parse_header(bytes, bytes.len())?;
    let payload = &bytes[start..];
    let mut params = ParamStore::new();
    let mut moments_m = Vec::new();
    let mut moments_v = Vec::new();
    let mut covered = 0u64;
    for e in &header.tensors {
        let (off, len) = check_entry(e, header.payload_bytes)?;
        if e.offset != covered {
            return Err(Error::CheckpointInconsistent {
                name: e.name.clone(),
                detail: format!("offset {} overlaps or leaves a gap (expected {covered})", e.offset),
            });
        }
        covered += 4 * len as u64;
        let t = Tensor::from_vec(e.shape, read_f32s(&payload[off..off + 4 * len]))?;
        match e.role {
            TensorRole::Param => {
                if params.find(&e.name).is_some() {
                    return Err(Error::CheckpointInconsistent {
                        name: e.name.clone(),
                        detail: "duplicate parameter".into(),
                    });
                }
                params.insert(e.name.clone(), t);
            }
            TensorRole::AdamM => moments_m.push((e.name.clone(), t)),
            TensorRole::AdamV => moments_v.push((e.name.clone(), t)),
        }
    }
    if covered != header.payload_bytes {
        return Err(Error::CheckpointInconsistent {
            name: "<payload>".into(),
            detail: format!("tensors cover {covered} of {} payload bytes", header.payload_bytes),
        });
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(o) => {
            let mut moments = Vec::with_capacity(moments_m.len());
            if !moments_m.is_empty() || !moments_v.is_empty() {
                if moments_m.len() != params.len() || moments_v.len() != params.len() {
                    return Err(Error::CheckpointInconsistent {
                        name: "<optimizer>".into(),
                        detail: "moment buffers do not cover every parameter".into(),
                    });
                }
                for (i, ((nm, m), (nv, v))) in moments_m.into_iter().zip(moments_v).enumerate() {
                    let p = params.value(i);
                    if nm != params.name(i) || nv != params.name(i) || m.shape() != p.shape() || v.shape() != p.shape() {
                        return Err(Error::CheckpointInconsistent {
                            name: nm,
                            detail: "moment buffer does not match its parameter".into(),
                        });
                    }
                    moments.push((m, v));
                }
            }
            Some(OptimizerState {
                kind: o.kind,
                lr: o.lr,
                moments,
                step: o.step,
            })
        }
    };
    // Parameters must match the architecture the config describes.
    let reference = build_model::<f32>(&header.config)?;
    for (i, (name, t)) in reference.params().iter().enumerate() {
        match params.find(name) {
            Some(id) if id.0 == i && params.get(id).shape() == t.shape() => {}
            Some(id) => {
                return Err(Error::CheckpointInconsistent {
                    name: name.to_string(),
                    detail: format!(
                        "stored shape {} at position {} but the config implies {} at position {i}",
                        params.get(id).shape(),
                        id.0,
                        t.shape()
                    ),
                })
            }
            None => {
                return Err(Error::CheckpointInconsistent {
                    name: name.to_string(),
                    detail: "missing from checkpoint".into(),
                })
            }
        }
    }
    if params.len() != reference.params().len() {
        return Err(Error::CheckpointInconsistent {
            name: "<params>".into(),
            detail: format!("{} stored parameters, config implies {}", params.len(), reference.params().len()),
        });
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        optimizer,
        step: header.step,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads only the header.
pub fn read_header(path: impl AsRef<Path>) -> Result<(Header, usize)> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut f = std::fs::File::open(path).map_err(io)?;
    let total = f.metadata().map_err(io)?.len() as usize;
    let mut head = [0u8; 16];
    let n = read_up_to(&mut f, &mut head).map_err(io)?;
    if n < 16 {
        return parse_header(&head[..n], total);
    }
    let hlen = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    if total < 16 + hlen {
        return parse_header(&head, total);
    }
    let mut bytes = head.to_vec();
    bytes.resize(16 + hlen, 0);
    f.read_exact(&mut bytes[16..]).map_err(io)?;
    parse_header(&bytes, total)
}

/// Reads a single parameter by name, seeking straight to its offset.
pub fn load_param(path: impl AsRef<Path>, name: &str) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let (header, start) = read_header(path)?;
    let entry = header
        .tensors
        .iter()
        .find(|e| e.role == TensorRole::Param && e.name == name)
        .ok_or_else(|| Error::CheckpointInconsistent {
            name: name.to_string(),
            detail: "no such parameter".into(),
        })?;
    let (off, len) = check_entry(entry, header.payload_bytes)?;
    let io = |e| Error::io(path, e);
    let mut f = std::fs::File::open(path).map_err(io)?;
    f.seek(SeekFrom::Start((start + off) as u64)).map_err(io)?;
    let mut buf = vec![0u8; 4 * len];
    f.read_exact(&mut buf).map_err(io)?;
    Tensor::from_vec(entry.shape, read_f32s(&buf))
}

fn read_up_to(f: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}
