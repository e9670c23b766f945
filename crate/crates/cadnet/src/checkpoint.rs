//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CADNETCK"
//! version    u32
//! config     u32 length, then the model config as UTF-8 JSON
//! count      u32 number of tensors
//! tensor     u32 name length, UTF-8 name, u32 rank, rank x u32 extents,
//!            values as f32, then the RMSProp cache as f32 (same count)
//! ```

use std::path::Path;

use cadnet_core::model::{Cadnet, ModelConfig};
use cadnet_core::numerics::{ParameterStore, Tensor};

use crate::error::{IoError, IoResult};

pub const MAGIC: &[u8; 8] = b"CADNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(net: &Cadnet) -> IoResult<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&net.config).map_err(|e| IoError::Format(e.to_string()))?;
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, net.params.len());
    for p in net.params.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for v in p.value.data().iter().chain(p.cache.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> IoResult<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(IoError::Format(format!("checkpoint truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> IoResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> IoResult<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| IoError::Format("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect())
    }
}

/// Parses a checkpoint and checks every tensor against the shapes its embedded config implies.
pub fn from_bytes(bytes: &[u8]) -> IoResult<Cadnet> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(IoError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let n = c.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(c.take(n)?).map_err(|e| IoError::Format(format!("embedded config: {e}")))?;
    let mut net = Cadnet::<f32>::new(config, 0)?;
    let count = c.u32()?;
    if count != net.params.len() {
        return Err(IoError::Format(format!("checkpoint holds {count} tensors, config implies {}", net.params.len())));
    }
    let mut store = ParameterStore::new();
    for expected in net.params.iter() {
        let n = c.u32()?;
        let name = std::str::from_utf8(c.take(n)?).map_err(|_| IoError::Format("tensor name is not UTF-8".into()))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<IoResult<Vec<_>>>()?;
        if name != expected.name {
            return Err(IoError::Format(format!("expected parameter {}, found {name}", expected.name)));
        }
        if shape != expected.value.shape() {
            return Err(IoError::Format(format!(
                "parameter {name}: expected shape {:?}, found {:?}",
                expected.value.shape(),
                shape
            )));
        }
        let len: usize = shape.iter().product();
        let value = Tensor::new(&shape, c.f32s(len)?)?;
        let cache = Tensor::new(&shape, c.f32s(len)?)?;
        let id = store.add(name, value)?;
        store.get_mut(id).cache = cache;
    }
    if c.at != bytes.len() {
        return Err(IoError::Format(format!("{} trailing bytes after the last tensor", bytes.len() - c.at)));
    }
    net.load_params(store)?;
    Ok(net)
}

pub fn save(net: &Cadnet, path: &Path) -> IoResult<()> {
    std::fs::write(path, to_bytes(net)?).map_err(|source| IoError::File { path: path.to_owned(), source })
}

pub fn load(path: &Path) -> IoResult<Cadnet> {
    let bytes = std::fs::read(path).map_err(|source| IoError::File { path: path.to_owned(), source })?;
    from_bytes(&bytes)
}
