//! KITTI velodyne binaries and the range-image grid format.
//!
//! Grid files: magic `LGRITIMG`, `u32` version, `u32` height, `u32` width,
//! `u8` dtype tag (0 = `f32` ranges, 1 = `u8` mask bits), row-major payload,
//! all little-endian.

use std::path::Path;

use super::{PointCloud, ProjectionConfig, RangeImage, RaydropMask};
use crate::error::{Error, Result};
use crate::io_util::Reader;

pub const IMG_MAGIC: &[u8; 8] = b"LGRITIMG";
pub const IMG_VERSION: u32 = 1;
const TAG_RANGE: u8 = 0;
const TAG_MASK: u8 = 1;

/// Parses consecutive little-endian `f32` records `(x, y, z, intensity)`.
pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format {
            kind: "kitti",
            reason: format!("{} bytes is not a multiple of the 16-byte record", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        points.push([f(0) as f64, f(1) as f64, f(2) as f64]);
        intensity.push(f(3));
    }
    PointCloud::new(points)?.with_intensity(intensity)
}

pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_bin(&bytes)
}

pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        let intensity = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_kitti_bin(cloud: &PointCloud, path: &Path) -> Result<()> {
    std::fs::write(path, encode_kitti_bin(cloud)).map_err(|e| Error::io(path, e))
}

fn header(out: &mut Vec<u8>, h: usize, w: usize, tag: u8) {
    out.extend_from_slice(IMG_MAGIC);
    out.extend_from_slice(&IMG_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.push(tag);
}

pub fn encode_range(img: &RangeImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + img.values().len() * 4);
    header(&mut out, img.height(), img.width(), TAG_RANGE);
    for v in img.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &RaydropMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + mask.bits().len());
    header(&mut out, mask.height(), mask.width(), TAG_MASK);
    out.extend_from_slice(mask.bits());
    out
}

/// Decoded grid file.
#[derive(Clone, Debug, PartialEq)]
pub enum GridFile {
    Range { height: usize, width: usize, values: Vec<f32> },
    Mask(RaydropMask),
}

impl GridFile {
    /// Range grid paired with the projection it was made with.
    pub fn into_range(self, cfg: &ProjectionConfig) -> Result<RangeImage> {
        match self {
            GridFile::Range { height, width, values } => {
                if (height, width) != (cfg.height, cfg.width) {
                    return Err(Error::shape("range_file", &[height, width], &[cfg.height, cfg.width]));
                }
                RangeImage::new(values, *cfg)
            }
            GridFile::Mask(_) => Err(Error::Format {
                kind: "range image",
                reason: "file holds a mask, not ranges".into(),
            }),
        }
    }

    pub fn into_mask(self) -> Result<RaydropMask> {
        match self {
            GridFile::Mask(m) => Ok(m),
            GridFile::Range { .. } => Err(Error::Format {
                kind: "range image",
                reason: "file holds ranges, not a mask".into(),
            }),
        }
    }
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridFile> {
    const KIND: &str = "range image";
    let mut r = Reader::new(bytes, KIND);
    r.expect_magic(IMG_MAGIC)?;
    let version = r.u32()?;
    if version != IMG_VERSION {
        return Err(Error::Format {
            kind: KIND,
            reason: format!("unsupported version {version}"),
        });
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let tag = r.u8()?;
    let n = height * width;
    let out = match tag {
        TAG_RANGE => {
            let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            GridFile::Range { height, width, values }
        }
        TAG_MASK => GridFile::Mask(RaydropMask::new(height, width, r.bytes(n)?.to_vec())?),
        other => {
            return Err(Error::Format {
                kind: KIND,
                reason: format!("unknown dtype tag {other}"),
            })
        }
    };
    r.finish()?;
    Ok(out)
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub fn write_range(img: &RangeImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_range(img)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(mask: &RaydropMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}
