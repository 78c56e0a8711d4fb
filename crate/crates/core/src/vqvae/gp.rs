//! Geometric-preservation augmentation: flips and small affine warps applied
//! identically to a range image and its mask.

use rand::Rng;

use super::GpConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeometricTransform {
    Identity,
    HFlip,
    VFlip,
    /// Rotation in degrees, translation in fractions of `(width, height)`, isotropic scale.
    Affine {
        rotation_deg: f64,
        translate: (f64, f64),
        scale: f64,
    },
}

impl GeometricTransform {
    /// Draws a flip or an affine warp within the configured ranges.
    pub fn sample<R: Rng>(cfg: &GpConfig, rng: &mut R) -> Self {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        match rng.gen_range(0..3) {
            0 => Self::HFlip,
            1 => Self::VFlip,
            _ => Self::Affine {
                rotation_deg: sym(rng, cfg.max_rotation_deg),
                translate: (sym(rng, cfg.max_translate_w), sym(rng, cfg.max_translate_h)),
                scale: if cfg.scale[0] < cfg.scale[1] {
                    rng.gen_range(cfg.scale[0]..=cfg.scale[1])
                } else {
                    cfg.scale[0]
                },
            },
        }
    }

    /// Source pixel for output pixel `(row, col)`, or `None` outside the frame.
    fn source(&self, row: usize, col: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        match *self {
            Self::Identity => Some((row, col)),
            Self::HFlip => Some((row, w - 1 - col)),
            Self::VFlip => Some((h - 1 - row, col)),
            Self::Affine {
                rotation_deg,
                translate,
                scale,
            } => {
                let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
                let u = col as f64 - cx - translate.0 * w as f64;
                let v = row as f64 - cy - translate.1 * h as f64;
                let (s, c) = (-rotation_deg.to_radians()).sin_cos();
                let sx = (c * u - s * v) / scale + cx;
                let sy = (s * u + c * v) / scale + cy;
                let (r, q) = (sy.round(), sx.round());
                (r >= 0.0 && q >= 0.0 && r < h as f64 && q < w as f64).then_some((r as usize, q as usize))
            }
        }
    }

    /// Nearest-neighbour resampling of a row-major `h x w` grid; out-of-frame pixels become 0.
    pub fn apply<V: Copy + Default>(&self, grid: &[V], h: usize, w: usize) -> Result<Vec<V>> {
        if grid.len() != h * w {
            return Err(Error::shape("geometric_transform", &[grid.len()], &[h, w]));
        }
        let mut inside = 0;
        let mut out = Vec::with_capacity(grid.len());
        for row in 0..h {
            for col in 0..w {
                out.push(match self.source(row, col, h, w) {
                    Some((r, c)) => {
                        inside += 1;
                        grid[r * w + c]
                    }
                    None => V::default(),
                });
            }
        }
        if inside == 0 {
            return Err(Error::invalid("geometric transform maps every pixel out of frame"));
        }
        Ok(out)
    }
}

/// Transformed `(x, x_m)` pair with identical parameters.
pub fn apply_geometric_preservation(
    x: &[f32],
    x_m: &[u8],
    h: usize,
    w: usize,
    t: &GeometricTransform,
) -> Result<(Vec<f32>, Vec<u8>)> {
    Ok((t.apply(x, h, w)?, t.apply(x_m, h, w)?))
}
