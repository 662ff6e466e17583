//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic   b"XDCNNCKP"
//! version u32
//! count   u32
//! count × record:
//!     name_len u32, name (utf-8)
//!     dtype    u8      0 = f32, 1 = f64, 2 = u8, 3 = u64
//!     ndim     u32, dims u64 × ndim
//!     nbytes   u64, raw data
//! crc32   u32 over every preceding byte
//! ```
//!
//! Metadata travels as ordinary records: `meta.kind` and `meta.spec` (u8,
//! utf-8), `meta.iteration` (u64) and optionally `meta.rng` (u8: 32-byte seed,
//! u64 stream, u128 word position).

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;

use super::{CrossDomainNetwork, CrossDomainSpec, Network, NetworkSpec};
use crate::error::CheckpointError;
use crate::tensor::{DType, Real};
use crate::{Error, Result, Rng};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"XDCNNCKP";

const DT_F32: u8 = 0;
const DT_F64: u8 = 1;
const DT_U8: u8 = 2;
const DT_U64: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NamedTensor<T> {
    pub fn new(name: String, shape: Vec<usize>, data: Vec<T>) -> Self {
        Self { name, shape, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Single,
    CrossDomain,
}

impl CheckpointKind {
    fn tag(self) -> &'static str {
        match self {
            CheckpointKind::Single => "single",
            CheckpointKind::CrossDomain => "cross_domain",
        }
    }
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData<T> {
    pub kind: CheckpointKind,
    pub spec_json: String,
    pub iteration: u64,
    pub rng: Option<[u8; 56]>,
    pub tensors: Vec<NamedTensor<T>>,
}

/// A network together with the RNG stream that was driving its training.
#[derive(Clone, Debug)]
pub struct Resumable<N> {
    pub net: N,
    pub rng: Option<Rng>,
}

fn rng_state(rng: &Rng) -> [u8; 56] {
    let mut out = [0u8; 56];
    out[..32].copy_from_slice(&rng.get_seed());
    out[32..40].copy_from_slice(&rng.get_stream().to_le_bytes());
    out[40..].copy_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn rng_restore(state: &[u8; 56]) -> Rng {
    let mut rng = Rng::from_seed(state[..32].try_into().unwrap());
    rng.set_stream(u64::from_le_bytes(state[32..40].try_into().unwrap()));
    rng.set_word_pos(u128::from_le_bytes(state[40..].try_into().unwrap()));
    rng
}

fn push_record(out: &mut Vec<u8>, name: &str, dtype: u8, shape: &[usize], data: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(data);
}

pub fn write_checkpoint<T: Real>(ckpt: &CheckpointData<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = 3 + ckpt.rng.is_some() as usize + ckpt.tensors.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    let kind = ckpt.kind.tag().as_bytes();
    push_record(&mut out, "meta.kind", DT_U8, &[kind.len()], kind);
    let spec = ckpt.spec_json.as_bytes();
    push_record(&mut out, "meta.spec", DT_U8, &[spec.len()], spec);
    push_record(&mut out, "meta.iteration", DT_U64, &[1], &ckpt.iteration.to_le_bytes());
    if let Some(state) = &ckpt.rng {
        push_record(&mut out, "meta.rng", DT_U8, &[56], state);
    }
    let dtype = match T::DTYPE {
        DType::F32 => DT_F32,
        DType::F64 => DT_F64,
    };
    let mut buf = Vec::new();
    for t in &ckpt.tensors {
        buf.clear();
        t.data.iter().for_each(|v| v.write_le(&mut buf));
        push_record(&mut out, &t.name, dtype, &t.shape, &buf);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64) -> Result<&'a [u8], CheckpointError> {
        let end = (self.pos as u64).checked_add(n).filter(|&e| e <= self.bytes.len() as u64);
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end as usize];
                self.pos = end as usize;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.pos as u64,
                needed: n,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn malformed(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            offset: self.pos as u64,
            message: message.into(),
        }
    }
}

/// Decodes a checkpoint, converting stored floating-point tensors to `T`.
pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<CheckpointData<T>, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = cur.u32()?;

    let mut kind = None;
    let mut spec_json = None;
    let mut iteration = None;
    let mut rng = None;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(name_len as u64)?)
            .map_err(|_| cur.malformed("record name is not utf-8"))?
            .to_string();
        let dtype = cur.u8()?;
        let ndim = cur.u32()?;
        let mut shape = Vec::with_capacity(ndim.min(8) as usize);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let nbytes = cur.u64()?;
        let elems: usize = shape.iter().product();
        let width = match dtype {
            DT_F32 => 4,
            DT_F64 => 8,
            DT_U8 => 1,
            DT_U64 => 8,
            other => return Err(cur.malformed(format!("unknown dtype {other} in `{name}`"))),
        };
        if (elems as u64).checked_mul(width) != Some(nbytes) {
            return Err(cur.malformed(format!(
                "`{name}`: {nbytes} bytes do not match shape {shape:?}"
            )));
        }
        let data = cur.take(nbytes)?;
        match (name.as_str(), dtype) {
            ("meta.kind", DT_U8) => {
                kind = Some(match data {
                    b"single" => CheckpointKind::Single,
                    b"cross_domain" => CheckpointKind::CrossDomain,
                    _ => return Err(cur.malformed("unknown checkpoint kind")),
                })
            }
            ("meta.spec", DT_U8) => {
                spec_json = Some(
                    String::from_utf8(data.to_vec())
                        .map_err(|_| cur.malformed("spec is not utf-8"))?,
                )
            }
            ("meta.iteration", DT_U64) => {
                iteration = Some(u64::from_le_bytes(data.try_into().map_err(|_| {
                    cur.malformed("iteration must be one u64")
                })?))
            }
            ("meta.rng", DT_U8) => {
                rng = Some(
                    <[u8; 56]>::try_from(data).map_err(|_| cur.malformed("rng state must be 56 bytes"))?,
                )
            }
            (n, _) if n.starts_with("meta.") => {
                return Err(cur.malformed(format!("unexpected metadata record `{n}`")))
            }
            (_, DT_F32) => tensors.push(NamedTensor::new(
                name,
                shape,
                data.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
            )),
            (_, DT_F64) => tensors.push(NamedTensor::new(
                name,
                shape,
                data.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
            )),
            _ => return Err(cur.malformed(format!("`{name}` is not a floating-point tensor"))),
        }
    }
    let body_end = cur.pos;
    let stored = cur.u32()?;
    if cur.pos != bytes.len() {
        return Err(cur.malformed("trailing bytes after checksum"));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    Ok(CheckpointData {
        kind: kind.ok_or_else(|| CheckpointError::MissingTensor("meta.kind".into()))?,
        spec_json: spec_json.ok_or_else(|| CheckpointError::MissingTensor("meta.spec".into()))?,
        iteration: iteration.ok_or_else(|| CheckpointError::MissingTensor("meta.iteration".into()))?,
        rng,
        tensors,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file<T: Real>(path: &Path, expect: CheckpointKind) -> Result<CheckpointData<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = read_checkpoint(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    if data.kind != expect {
        return Err(Error::Data(format!(
            "{} holds a {} network, expected {}",
            path.display(),
            data.kind.tag(),
            expect.tag()
        )));
    }
    Ok(data)
}

fn into_map<T>(tensors: Vec<NamedTensor<T>>) -> BTreeMap<String, NamedTensor<T>> {
    tensors.into_iter().map(|t| (t.name.clone(), t)).collect()
}

fn reject_leftovers<T>(map: BTreeMap<String, NamedTensor<T>>, path: &Path) -> Result<()> {
    match map.keys().next() {
        None => Ok(()),
        Some(name) => Err(Error::Data(format!(
            "{}: unexpected tensor `{name}`",
            path.display()
        ))),
    }
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, rng: Option<&Rng>, path: &Path) -> Result<()> {
    let data = CheckpointData {
        kind: CheckpointKind::Single,
        spec_json: serde_json::to_string(net.spec())?,
        iteration: net.iteration,
        rng: rng.map(rng_state),
        tensors: net.state(),
    };
    write_file(path, &write_checkpoint(&data))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Resumable<Network<T>>> {
    let data = read_file::<T>(path, CheckpointKind::Single)?;
    let spec: NetworkSpec = serde_json::from_str(&data.spec_json)?;
    let mut net = Network::zeros(&spec)?;
    let mut map = into_map(data.tensors);
    net.load_state(&mut map)?;
    reject_leftovers(map, path)?;
    net.iteration = data.iteration;
    Ok(Resumable {
        net,
        rng: data.rng.as_ref().map(rng_restore),
    })
}

pub fn save_cross_domain<T: Real>(
    net: &CrossDomainNetwork<T>,
    rng: Option<&Rng>,
    path: &Path,
) -> Result<()> {
    let data = CheckpointData {
        kind: CheckpointKind::CrossDomain,
        spec_json: serde_json::to_string(&net.spec)?,
        iteration: net.iteration,
        rng: rng.map(rng_state),
        tensors: net.state(),
    };
    write_file(path, &write_checkpoint(&data))
}

pub fn load_cross_domain<T: Real>(path: &Path) -> Result<Resumable<CrossDomainNetwork<T>>> {
    let data = read_file::<T>(path, CheckpointKind::CrossDomain)?;
    let spec: CrossDomainSpec = serde_json::from_str(&data.spec_json)?;
    let mut net = CrossDomainNetwork::zeros(&spec)?;
    let mut map = into_map(data.tensors);
    net.load_state(&mut map)?;
    reject_leftovers(map, path)?;
    net.iteration = data.iteration;
    Ok(Resumable {
        net,
        rng: data.rng.as_ref().map(rng_restore),
    })
}
