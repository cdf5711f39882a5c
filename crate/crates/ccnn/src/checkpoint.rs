//! Binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic      8 bytes  "CCNNCKPT"
//! version    u32
//! bits       u32      32 or 64
//! header     u64 length + UTF-8 JSON {"model": CcnnConfig, "meta": any}
//! count      u64
//! count x    u32 name length, name, u32 rank, rank x u64 extent, raw values
//! ```
//!
//! Values are stored at the precision of the network that wrote them, so a
//! write/read round trip in the same precision is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Parameterized;
use crate::error::{Error, Result};
use crate::model::{Ccnn, CcnnConfig};
use crate::tensor::{Precision, Real, Tensor};

const MAGIC: &[u8; 8] = b"CCNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: CcnnConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Contents of a checkpoint file before it is turned into a network.
pub struct Checkpoint {
    pub precision: Precision,
    pub config: CcnnConfig,
    /// Free-form run information (dataset, resolution, epoch).
    pub meta: serde_json::Value,
    /// `(name, shape, values widened to f64)`
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save<T: Real>(net: &Ccnn<T>, meta: &serde_json::Value, path: &Path) -> Result<()> {
    fs::write(path, encode(net, meta)?)?;
    Ok(())
}

pub fn encode<T: Real>(net: &Ccnn<T>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&T::BITS.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        model: net.config().clone(),
        meta: meta.clone(),
    })
    .map_err(|e| Error::format("header", e.to_string()))?;
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);

    let mut arrays: Vec<(String, Vec<usize>, Vec<T>)> = Vec::new();
    net.visit_params(&mut |p| arrays.push((p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec())));
    for (name, v) in net.buffers() {
        arrays.push((name, vec![v.len()], v));
    }
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, shape, data) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(field, "file truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4")))
    }

    fn u64(&mut self, field: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, field)?.try_into().expect("8"));
        usize::try_from(v).map_err(|_| Error::format(field, "value too large"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let precision = Precision::from_bits(r.u32("precision")?)?;
    let hlen = r.u64("header")?;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::format("header", e.to_string()))?;
    let n = r.u64("count")?;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32("name")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|_| Error::format("name", "not UTF-8"))?;
        let rank = r.u32(&name)? as usize;
        let shape = (0..rank).map(|_| r.u64(&name)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let width = precision.bits() as usize / 8;
        let raw = r.take(count.checked_mul(width).ok_or_else(|| Error::format(&name, "size overflow"))?, &name)?;
        let values = match precision {
            Precision::F32 => raw.chunks(4).map(|c| f32::read_le(c) as f64).collect(),
            Precision::F64 => raw.chunks(8).map(f64::read_le).collect(),
        };
        arrays.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailer", "unexpected bytes after the last array"));
    }
    Ok(Checkpoint {
        precision,
        config: header.model,
        meta: header.meta,
        arrays,
    })
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

impl Checkpoint {
    /// Rebuild the network. Values are converted to `T`; loading into the
    /// precision that wrote the file reproduces it bit for bit.
    pub fn into_model<T: Real>(self) -> Result<Ccnn<T>> {
        let mut net = Ccnn::<T>::build(self.config)?;
        let mut by_name: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
            self.arrays.into_iter().map(|(n, s, v)| (n, (s, v))).collect();
        let mut err = None;
        net.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match by_name.remove(&p.name) {
                Some((shape, values)) if shape == p.value.shape() => {
                    p.value = Tensor::new(shape, values.into_iter().map(T::lit).collect()).expect("shape checked");
                }
                Some((shape, _)) => {
                    err = Some(Error::format(
                        p.name.clone(),
                        format!("shape {shape:?}, expected {:?}", p.value.shape()),
                    ))
                }
                None => err = Some(Error::format(p.name.clone(), "missing from checkpoint")),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        for (name, (_, values)) in by_name {
            let v: Vec<T> = values.into_iter().map(T::lit).collect();
            net.set_buffer(&name, &v)?;
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(decode(b"NOTACKPT\x01\0\0\0"), Err(Error::Format { .. })));
        let net = Ccnn::<f32>::build(CcnnConfig::new(1, 2, &[8], 2)).unwrap();
        let bytes = encode(&net, &serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(&bytes).is_ok());
    }
}
