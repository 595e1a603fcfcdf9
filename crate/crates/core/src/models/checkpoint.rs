use std::fs;
use std::path::Path;

use super::network::Network;
use crate::error::{Error, Result};

/// Checkpoint layout, integers little-endian `u32`:
///
/// ```text
/// magic "CMLABCK\0" | version | entry count
/// per entry: name length | name (UTF-8) | ndim | dims… | values (f32 LE)
/// ```
///
/// Entries cover every parameter, running statistics included, in network
/// order.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CMLABCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(network: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(network.params().len() as u32).to_le_bytes());
    for p in network.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(network: &Network, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(network)).map_err(|e| Error::io(path, e))
}

/// Loads values into `network`, which must have the same parameter names
/// and shapes in the same order.
pub fn restore_checkpoint(network: &mut Network, bytes: &[u8], origin: &Path) -> Result<()> {
    let mut r = Cursor { bytes, pos: 0, origin };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    if count != network.params().len() {
        return Err(Error::format(
            origin,
            format!("{count} entries, network has {}", network.params().len()),
        ));
    }
    let mut loaded = Vec::with_capacity(count);
    for p in network.params() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(origin, "name is not UTF-8"))?;
        if name != p.name {
            return Err(Error::format(origin, format!("entry {name:?} where {:?} was expected", p.name)));
        }
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != p.value.shape() {
            return Err(Error::format(
                origin,
                format!("{name}: shape {dims:?}, network has {:?}", p.value.shape()),
            ));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(4 * n)?;
        loaded.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>());
    }
    if r.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after last entry"));
    }
    for (p, values) in network.params_mut().iter_mut().zip(loaded) {
        p.value.data_mut().copy_from_slice(&values);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "checkpoint truncated"));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(network: &mut Network, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore_checkpoint(network, &bytes, path)
}
