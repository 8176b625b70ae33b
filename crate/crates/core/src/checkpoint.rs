//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TMNT" | u32 version | u64 len | JSON header (len bytes)
//! repeated: u32 name_len | name | u8 dtype | u32 rank | u64 extents[rank] | payload
//! u32 CRC32 of everything before it
//! ```
//!
//! The JSON header holds the run configuration, the step counter and a
//! digest of the metric history. dtype 1 is f64, 2 is f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"TMNT";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: serde_json::Value,
    pub step: u64,
    pub metrics_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(header: Header, store: &ParamStore) -> Self {
        Checkpoint { header, params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let dtype = if std::mem::size_of::<Scalar>() == 8 { DTYPE_F64 } else { DTYPE_F32 };
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dtype);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 8 + 4 {
            return Err(Error::Format(format!("checkpoint too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let mut params = Vec::new();
        while r.pos < body.len() {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<Scalar> = match dtype {
                DTYPE_F64 => r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Scalar).collect(),
                DTYPE_F32 => r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Scalar).collect(),
                other => return Err(Error::Format(format!("unknown dtype tag {other} for {name}"))),
            };
            params.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies every parameter into `store`. Fails without touching `store`
    /// if names or shapes differ, listing each offending name.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in &self.params {
            match store.get(name) {
                None => problems.push(format!("{name}: not in model")),
                Some(p) if p.value.shape() != t.shape() => {
                    problems.push(format!("{name}: checkpoint {:?} vs model {:?}", t.shape(), p.value.shape()))
                }
                Some(_) => {}
            }
        }
        for p in store.iter() {
            if !self.params.iter().any(|(n, _)| n == &p.name) {
                problems.push(format!("{}: missing from checkpoint", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::CheckpointMismatch(problems));
        }
        for (name, t) in &self.params {
            store.set_value(name, t.clone())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint record runs past the end".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
