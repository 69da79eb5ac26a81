//! Binary checkpoint codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "YODO"                    magic, 4 bytes
//! version        u32        currently 1
//! flags          u32        bit 0: single parameter vector (fixed model)
//! n_dims         u32
//! dims           u32 x n_dims   input width, hidden widths..., 1
//! len            u64, then len x f64     ω1 (or θ)
//! len            u64, then len x f64     ω2, absent when bit 0 is set
//! meta_len       u32, then meta_len bytes of UTF-8 `key=value\n` lines, sorted by key
//! crc32          u32        CRC-32 (IEEE) of every preceding byte
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::baseline::FixedModel;
use crate::error::{Error, Result};
use crate::model::{MlpArchitecture, ParamVector};
use crate::objective::TrainMeta;
use crate::subspace::SubspaceModel;

pub const MAGIC: &[u8; 4] = b"YODO";
pub const VERSION: u32 = 1;
const FLAG_SINGLE: u32 = 1;

/// Decoded checkpoint contents before they are turned into a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: MlpArchitecture,
    pub omega1: ParamVector,
    /// `None` for a fixed (single-vector) model.
    pub omega2: Option<ParamVector>,
    pub meta: BTreeMap<String, String>,
}

/// Either kind of trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Subspace(SubspaceModel),
    Fixed(FixedModel),
}

impl From<&SubspaceModel> for Checkpoint {
    fn from(m: &SubspaceModel) -> Self {
        let mut meta = m.meta.to_map();
        meta.insert("model.kind".into(), "subspace".into());
        Checkpoint {
            arch: m.arch.clone(),
            omega1: m.omega1.clone(),
            omega2: Some(m.omega2.clone()),
            meta,
        }
    }
}

impl From<&FixedModel> for Checkpoint {
    fn from(m: &FixedModel) -> Self {
        let mut meta = m.meta.to_map();
        meta.insert("model.kind".into(), "fixed".into());
        meta.insert("model.A".into(), format!("{:?}", m.fairness_weight));
        Checkpoint {
            arch: m.arch.clone(),
            omega1: m.theta.clone(),
            omega2: None,
            meta,
        }
    }
}

impl Checkpoint {
    pub fn into_model(mut self) -> Result<SavedModel> {
        let kind = self.meta.remove("model.kind").unwrap_or_default();
        match (kind.as_str(), self.omega2) {
            ("subspace", Some(omega2)) => {
                let meta = TrainMeta::from_map(self.meta)?;
                Ok(SavedModel::Subspace(SubspaceModel::new(
                    self.arch,
                    self.omega1,
                    omega2,
                    meta,
                )?))
            }
            ("fixed", None) => {
                let a = self
                    .meta
                    .remove("model.A")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Checkpoint("fixed model without a valid `model.A`".into()))?;
                let meta = TrainMeta::from_map(self.meta)?;
                Ok(SavedModel::Fixed(FixedModel::new(self.arch, self.omega1, a, meta)?))
            }
            (kind, omega2) => Err(Error::Checkpoint(format!(
                "model kind `{kind}` does not match a file with {} parameter vector(s)",
                if omega2.is_some() { 2 } else { 1 }
            ))),
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_vector(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let dims = ckpt.arch.dims();
    let m = ckpt.arch.param_count();
    if ckpt.omega1.len() != m || ckpt.omega2.as_ref().is_some_and(|w| w.len() != m) {
        return Err(Error::Checkpoint(
            "parameter vectors do not match the architecture".into(),
        ));
    }
    let mut meta = String::new();
    for (k, v) in &ckpt.meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry `{k}` cannot be stored")));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    let mut buf = Vec::with_capacity(32 + 4 * dims.len() + 16 * m + meta.len());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, if ckpt.omega2.is_none() { FLAG_SINGLE } else { 0 });
    put_u32(&mut buf, dims.len() as u32);
    for d in &dims {
        put_u32(&mut buf, *d as u32);
    }
    put_vector(&mut buf, &ckpt.omega1);
    if let Some(w2) = &ckpt.omega2 {
        put_vector(&mut buf, w2);
    }
    put_u32(&mut buf, meta.len() as u32);
    buf.extend_from_slice(meta.as_bytes());
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    Ok(buf)
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vector(&mut self, expected: usize) -> Result<ParamVector> {
        let len = self.u64()?;
        if len != expected as u64 {
            return Err(Error::Checkpoint(format!(
                "vector of length {len} but the architecture has {expected} parameters"
            )));
        }
        let raw = self.take(expected * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect::<Vec<_>>()
            .into())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let flags = r.u32()?;
    if flags & !FLAG_SINGLE != 0 {
        return Err(Error::Checkpoint(format!("unknown header flags {flags:#x}")));
    }
    let n_dims = r.u32()? as usize;
    if n_dims > (body.len() - r.pos) / 4 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let dims = (0..n_dims)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = MlpArchitecture::from_dims(&dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let m = arch.param_count();
    let omega1 = r.vector(m)?;
    let omega2 = if flags & FLAG_SINGLE == 0 {
        Some(r.vector(m)?)
    } else {
        None
    };
    let meta_len = r.u32()? as usize;
    let text =
        core::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after metadata".into()));
    }
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("metadata line `{line}` has no `=`")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(Checkpoint {
        arch,
        omega1,
        omega2,
        meta,
    })
}

pub fn encode_subspace(model: &SubspaceModel) -> Result<Vec<u8>> {
    encode(&Checkpoint::from(model))
}

pub fn encode_fixed(model: &FixedModel) -> Result<Vec<u8>> {
    encode(&Checkpoint::from(model))
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel> {
    decode(bytes)?.into_model()
}
