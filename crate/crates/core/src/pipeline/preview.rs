//! Binary PGM previews of range images.
//!
//! Format: `P5\n<width> <height>\n255\n` followed by one byte per pixel, row
//! by row. Kept pixels map range `v` in [0, 1] to `1 + round(254 v)`; dropped
//! pixels are 0, so a kept zero range stays distinguishable from a drop.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{RangeImage, RaydropMask};

pub fn encode_preview(img: &RangeImage, mask: &RaydropMask) -> Result<Vec<u8>> {
    let (h, w) = (img.height(), img.width());
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape("preview", &[h, w], &[mask.height(), mask.width()]));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.values().iter().zip(mask.bits()).map(|(&v, &m)| {
        if m == 0 {
            0
        } else {
            1 + (v.clamp(0.0, 1.0) as f64 * 254.0).round() as u8
        }
    }));
    Ok(out)
}

pub fn emit_preview(img: &RangeImage, mask: &RaydropMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_preview(img, mask)?).map_err(|e| Error::io(path, e))
}
