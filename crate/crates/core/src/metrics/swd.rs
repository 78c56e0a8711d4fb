//! Sliced Wasserstein distance between sets of images via local patch descriptors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{indexed, mix64, substream, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwdConfig {
    /// Side length of the square patches.
    pub patch_size: usize,
    pub patches_per_level: usize,
    /// Pyramid levels; each halves both sides by 2x2 averaging.
    pub levels: usize,
    pub projections: usize,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self {
            patch_size: 7,
            patches_per_level: 64,
            levels: 2,
            projections: 512,
        }
    }
}

impl SwdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patches_per_level == 0 || self.levels == 0 || self.projections == 0 {
            return Err(Error::Config("swd settings must all be positive".into()));
        }
        Ok(())
    }
}

/// A borrowed row-major image.
#[derive(Clone, Copy, Debug)]
pub struct ImageRef<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [f32],
}

/// 2x2 average pooling; odd trailing rows and columns are dropped.
fn downsample(h: usize, w: usize, x: &[f64]) -> (usize, usize, Vec<f64>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out.push(0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]));
        }
    }
    (oh, ow, out)
}

/// Patch descriptors of every image at every level, `[level][patch][p*p]` flattened
/// per level. Patch positions depend only on `(seed, level, image index)`, so two
/// sets of equally sized images are sampled at the same places.
pub fn patch_descriptors(images: &[ImageRef<'_>], cfg: &SwdConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let p = cfg.patch_size;
    let per_image: Vec<Result<Vec<Vec<f64>>>> = par::map_indexed(images.len(), |i| {
        let img = images[i];
        if img.data.len() != img.height * img.width {
            return Err(Error::shape("swd image", &[img.data.len()], &[img.height, img.width]));
        }
        let (mut h, mut w) = (img.height, img.width);
        let mut x: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
        let mut levels = Vec::with_capacity(cfg.levels);
        for level in 0..cfg.levels {
            if level > 0 {
                (h, w, x) = downsample(h, w, &x);
            }
            if h < p || w < p {
                return Err(Error::invalid(format!(
                    "level {level} is {h}x{w}, smaller than the {p}x{p} patch"
                )));
            }
            let mut rng = indexed(seed, stream::METRICS, ((level as u64) << 32) | i as u64);
            let mut desc = Vec::with_capacity(cfg.patches_per_level * p * p);
            for _ in 0..cfg.patches_per_level {
                let (r0, c0) = (rng.gen_range(0..=h - p), rng.gen_range(0..=w - p));
                for r in r0..r0 + p {
                    desc.extend_from_slice(&x[r * w + c0..r * w + c0 + p]);
                }
            }
            levels.push(desc);
        }
        Ok(levels)
    });
    let mut out = vec![Vec::new(); cfg.levels];
    for levels in per_image {
        for (acc, d) in out.iter_mut().zip(levels?) {
            acc.extend(d);
        }
    }
    Ok(out)
}

/// `W_1` between two empirical distributions given as sorted samples,
/// `integral |F_a^-1(t) - F_b^-1(t)| dt`. Equal sizes reduce to the mean
/// absolute difference of the sorted samples.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / na as f64;
    }
    // walk the merged quantile breakpoints i/na and j/nb
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let ta = (i + 1) as f64 / na as f64;
        let tb = (j + 1) as f64 / nb as f64;
        let next = ta.min(tb);
        total += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if ta <= tb {
            i += 1;
        }
        if tb <= ta {
            j += 1;
        }
    }
    total
}

/// Unit directions in `dim` dimensions, deterministic in `seed` and `level`.
pub fn projection_directions(dim: usize, count: usize, seed: u64, level: usize) -> Vec<f64> {
    let mut rng = substream(mix64(seed ^ level as u64), stream::METRICS);
    let mut out = Vec::with_capacity(dim * count);
    for _ in 0..count {
        // Box-Muller; the direction is uniform on the sphere
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        out.extend(v.iter().map(|x| x / norm));
    }
    out
}

/// Sliced `W_1` between two descriptor sets of dimension `dim`, averaged over
/// `dirs` (row-major `[count, dim]`).
pub fn sliced_wasserstein(a: &[f64], b: &[f64], dim: usize, dirs: &[f64]) -> Result<f64> {
    if dim == 0 || a.is_empty() || b.is_empty() || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(Error::invalid("descriptor sets must be non-empty multiples of the dimension"));
    }
    let count = dirs.len() / dim;
    let project = |set: &[f64], d: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = set.chunks(dim).map(|x| x.iter().zip(d).map(|(p, q)| p * q).sum()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let per_dir = par::map_indexed(count, |k| {
        let d = &dirs[k * dim..(k + 1) * dim];
        wasserstein_1d_sorted(&project(a, d), &project(b, d))
    });
    Ok(per_dir.iter().sum::<f64>() / count as f64)
}

/// SWD between two image sets (raw, not scaled by 100).
pub fn swd(set_a: &[ImageRef<'_>], set_b: &[ImageRef<'_>], cfg: &SwdConfig, seed: u64) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::invalid("swd needs two non-empty image sets"));
    }
    let shape = (set_a[0].height, set_a[0].width);
    if let Some(img) = set_a.iter().chain(set_b).find(|i| (i.height, i.width) != shape) {
        return Err(Error::shape("swd", &[img.height, img.width], &[shape.0, shape.1]));
    }
    let da = patch_descriptors(set_a, cfg, seed)?;
    let db = patch_descriptors(set_b, cfg, seed)?;
    let dim = cfg.patch_size * cfg.patch_size;
    let mut total = 0.0;
    for level in 0..cfg.levels {
        let dirs = projection_directions(dim, cfg.projections, seed, level);
        total += sliced_wasserstein(&da[level], &db[level], dim, &dirs)?;
    }
    Ok(total / cfg.levels as f64)
}
