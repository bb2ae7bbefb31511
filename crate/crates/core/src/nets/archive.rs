//! Little-endian container for named `f64` tensors plus a JSON metadata
//! blob. Values round-trip bit-exactly.

use std::io::{Read, Write};

use super::NetError;

const MAGIC: &[u8; 8] = b"NDFTENS\0";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Result<&TensorEntry, NetError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NetError::MissingTensor(name.to_string()))
    }
}

fn io_err(e: std::io::Error) -> NetError {
    NetError::Archive(e.to_string())
}

pub fn write_tensors<W: Write>(w: &mut W, archive: &TensorArchive) -> Result<(), NetError> {
    let meta = serde_json::to_vec(&archive.metadata).map_err(|e| NetError::Archive(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(archive.tensors.len() as u32).to_le_bytes());
    for t in &archive.tensors {
        let count: usize = t.shape.iter().product();
        if count != t.data.len() {
            return Err(NetError::ShapeMismatch {
                what: "tensor element count",
                expected: count,
                actual: t.data.len(),
            });
        }
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetError> {
        if self.bytes.len() - self.pos < n {
            return Err(NetError::Archive(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<TensorArchive, NetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(NetError::Archive("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(NetError::Version {
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    let meta_len = c.u64("metadata length")? as usize;
    let metadata = serde_json::from_slice(c.take(meta_len, "metadata")?)
        .map_err(|e| NetError::Archive(e.to_string()))?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32("tensor name")? as usize;
        let name = String::from_utf8(c.take(name_len, "tensor name")?.to_vec())
            .map_err(|e| NetError::Archive(e.to_string()))?;
        let ndim = c.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64(&name)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(|| NetError::Archive("tensor too large".into()))?, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(TensorEntry { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(NetError::Archive("trailing bytes".into()));
    }
    Ok(TensorArchive { metadata, tensors })
}
