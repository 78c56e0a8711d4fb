//! Binary parameter snapshots.
//!
//! Layout (little-endian): magic `LGRITCKP`, `u32` version, `u32` entry count,
//! then per entry a `u32`-length-prefixed UTF-8 name, `u32` rank, `rank` x `u32`
//! dims and the `f32` payload.

use std::path::Path;

use super::params::ParamSet;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io_util::Reader;

pub const MAGIC: &[u8; 8] = b"LGRITCKP";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    const KIND: &str = "checkpoint";
    let mut r = Reader::new(bytes, KIND);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            kind: KIND,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(len)?.to_vec()).map_err(|_| Error::Format {
            kind: KIND,
            reason: "entry name is not UTF-8".into(),
        })?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f32().map(|v| T::lit(v as f64))).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            kind: KIND,
            reason: format!("entry `{name}`: {e}"),
        })?;
        entries.push((name, t));
    }
    r.finish()?;
    Ok(entries)
}

pub fn save<T: Real>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into `params`, which fixes the expected names and shapes.
pub fn load_into<T: Real>(params: &mut ParamSet<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params.load_values(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("enc.w", Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap());
        ps.add("codebook", Tensor::from_f64(&[1], &[0.25]).unwrap());
        let bytes = encode(&ps);
        assert_eq!(&bytes[..8], b"LGRITCKP");
        let entries = decode::<f32>(&bytes).unwrap();
        assert_eq!(entries[0].0, "enc.w");
        assert_eq!(entries[0].1, *ps.get(ps.find("enc.w").unwrap()));
        let mut copy = ps.clone();
        copy.load_values(entries).unwrap();

        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(&[2, 2]));
        let mut other = ParamSet::<f32>::new();
        other.add("w", Tensor::zeros(&[4]));
        let err = other.load_values(decode(&encode(&ps)).unwrap()).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
