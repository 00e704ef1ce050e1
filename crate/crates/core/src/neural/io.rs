//! Binary weight files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BDNN" | u16 version | u16 layer_count
//! per layer: u32 rows | u32 cols | rows*cols f64 weights (row-major) | cols f64 biases
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use super::{DenseNetwork, Layer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BDNN";
pub const WEIGHT_FILE_VERSION: u16 = 1;

pub fn weights_to_bytes(net: &DenseNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHT_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u16).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.fan_in as u32).to_le_bytes());
        out.extend_from_slice(&(layer.fan_out as u32).to_le_bytes());
        for w in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptFile(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptFile(format!("{what} size overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn weights_from_bytes(buf: &[u8]) -> Result<DenseNetwork> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptFile("bad magic, not a BDNN weight file".into()));
    }
    let version = r.u16("version")?;
    if version != WEIGHT_FILE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: WEIGHT_FILE_VERSION,
        });
    }
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let rows = r.u32("layer rows")? as usize;
        let cols = r.u32("layer cols")? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CorruptFile(format!("layer {l} shape overflows")))?;
        let weights = r.f64s(n, "weights")?;
        let bias = r.f64s(cols, "biases")?;
        layers.push(Layer {
            fan_in: rows,
            fan_out: cols,
            weights,
            bias,
        });
    }
    let payload_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != buf.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes after checksum",
            buf.len() - r.pos
        )));
    }
    let actual = crc32fast::hash(&buf[..payload_end]);
    if stored != actual {
        return Err(Error::CorruptFile(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    DenseNetwork::from_layers(layers).map_err(|e| Error::CorruptFile(format!("inconsistent dimensions: {e}")))
}

pub fn save_weights(net: &DenseNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&buf)
}
