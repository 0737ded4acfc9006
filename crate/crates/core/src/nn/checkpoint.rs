//! Versioned single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//! `MAGIC(8) | version u32 | kind (u32 len + utf8) | header json (u64 len + utf8)
//!  | tensor count u32 | { name (u32 len + utf8) | dtype u8 | ndim u32 | dims u64* | data }*`
//! Tensors are written in name order, so identical parameters give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NERFEDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl TensorBlob {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let flat = t.flatten_all()?;
        let mut bytes = Vec::new();
        match t.dtype() {
            DType::F32 => {
                for v in flat.to_vec1::<f32>()? {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::F64 => {
                for v in flat.to_vec1::<f64>()? {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        }
        Ok(Self { dtype: t.dtype(), shape, bytes })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let t = match self.dtype {
            DType::F32 => {
                let v: Vec<f32> = self
                    .bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), device)?
            }
            DType::F64 => {
                let v: Vec<f64> = self
                    .bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                Tensor::from_vec(v, self.shape.as_slice(), device)?
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(t)
    }

    fn elem_size(dtype: DType) -> Result<usize> {
        match dtype {
            DType::F32 => Ok(4),
            DType::F64 => Ok(8),
            other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub header: serde_json::Value,
    pub tensors: BTreeMap<String, TensorBlob>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        write_str32(&mut out, &self.kind)?;
        let header = serde_json::to_vec(&self.header)?;
        out.write_u64::<LittleEndian>(header.len() as u64)?;
        out.write_all(&header)?;
        out.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, blob) in &self.tensors {
            write_str32(&mut out, name)?;
            out.write_u8(match blob.dtype {
                DType::F32 => 0,
                DType::F64 => 1,
                other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
            })?;
            out.write_u32::<LittleEndian>(blob.shape.len() as u32)?;
            for d in &blob.shape {
                out.write_u64::<LittleEndian>(*d as u64)?;
            }
            out.write_all(&blob.bytes)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("malformed checkpoint: {what}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("short magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let kind = read_str32(&mut r).ok_or_else(|| bad("kind"))?;
        let hlen = r.read_u64::<LittleEndian>().map_err(|_| bad("header length"))? as usize;
        if hlen > bytes.len() {
            return Err(bad("header length"));
        }
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf).map_err(|_| bad("header"))?;
        let header: serde_json::Value =
            serde_json::from_slice(&hbuf).map_err(|_| bad("header json"))?;
        let n = r.read_u32::<LittleEndian>().map_err(|_| bad("tensor count"))?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name = read_str32(&mut r).ok_or_else(|| bad("tensor name"))?;
            let dtype = match r.read_u8().map_err(|_| bad("dtype"))? {
                0 => DType::F32,
                1 => DType::F64,
                _ => return Err(bad("dtype tag")),
            };
            let ndim = r.read_u32::<LittleEndian>().map_err(|_| bad("ndim"))? as usize;
            if ndim > 8 {
                return Err(bad("ndim"));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u64::<LittleEndian>().map_err(|_| bad("dims"))? as usize);
            }
            let len = shape.iter().product::<usize>() * TensorBlob::elem_size(dtype)?;
            let remaining = bytes.len() - r.position() as usize;
            if len > remaining {
                return Err(bad("truncated tensor data"));
            }
            let mut data = vec![0u8; len];
            r.read_exact(&mut data).map_err(|_| bad("tensor data"))?;
            tensors.insert(name, TensorBlob { dtype, shape, bytes: data });
        }
        if r.position() as usize != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind, header, tensors })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn header_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("header lacks `{key}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("header field `{key}`: {e}")))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_str32(out: &mut Vec<u8>, s: &str) -> Result<()> {
    out.write_u32::<LittleEndian>(s.len() as u32)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str32(r: &mut Cursor<&[u8]>) -> Option<String> {
    let n = r.read_u32::<LittleEndian>().ok()? as usize;
    if n > 1 << 20 {
        return None;
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).ok()?;
    String::from_utf8(buf).ok()
}
