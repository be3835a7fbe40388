//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AFCK" | u32 format version | u32 metadata length | metadata (UTF-8 JSON)
//! | u32 parameter count
//! | per parameter: u32 name length | name | u32 rank | u64 dims[rank] | f64 payload (row-major)
//! | u32 CRC32 of every preceding byte
//! ```

use ndarray::Array2;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AFCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(store: &ParamStore, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(metadata)?;
    let mut buf = Vec::with_capacity(16 + meta.len() + store.num_scalars() * 8 + store.len() * 48);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let v = store.value(id);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(v.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(v.ncols() as u64).to_le_bytes());
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, ParamStore)> {
    if bytes.len() < 4 + 4 + 4 + 4 + 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC32 mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let metadata: serde_json::Value = serde_json::from_slice(r.take(meta_len)?)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}"))),
        };
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value = Array2::from_shape_vec((rows, cols), data).expect("length matches dims");
        store.insert(name, value)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes before CRC".into()));
    }
    if let Some(v) = metadata.get("store_version").and_then(|v| v.as_u64()) {
        store.set_version(v);
    }
    Ok((metadata, store))
}
