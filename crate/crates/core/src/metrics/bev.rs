//! Bird's-eye-view occupancy histograms, Gaussian-kernel MMD and Jensen-Shannon divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevConfig {
    /// The grid covers `[-half_extent, half_extent)` in x and y (meters).
    pub half_extent: f64,
    /// Cells per side.
    pub resolution: usize,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BevConfig {
    /// 40 x 40 cells over +-25 m, sized for the synthetic corridors.
    pub fn desk() -> Self {
        Self {
            half_extent: 25.0,
            resolution: 40,
        }
    }

    /// 100 x 100 cells over +-50 m.
    pub fn kitti() -> Self {
        Self {
            half_extent: 50.0,
            resolution: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) || self.resolution == 0 {
            return Err(Error::Config("bev half_extent and resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Point counts per x-y cell, row index along y.
#[derive(Clone, Debug, PartialEq)]
pub struct BevHistogram {
    resolution: usize,
    counts: Vec<u64>,
    total: u64,
}

impl BevHistogram {
    pub fn from_counts(resolution: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != resolution * resolution {
            return Err(Error::shape("bev histogram", &[counts.len()], &[resolution, resolution]));
        }
        let total = counts.iter().sum();
        Ok(Self {
            resolution,
            counts,
            total,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// No point fell inside the bounds.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Cell probabilities; all zero for an empty histogram.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Sum of several histograms of the same resolution.
    pub fn aggregate(hists: &[BevHistogram]) -> Result<Self> {
        let first = hists.first().ok_or_else(|| Error::invalid("no histograms to aggregate"))?;
        let mut counts = vec![0u64; first.counts.len()];
        for h in hists {
            if h.resolution != first.resolution {
                return Err(Error::shape("bev aggregate", &[h.resolution], &[first.resolution]));
            }
            for (a, &c) in counts.iter_mut().zip(&h.counts) {
                *a += c;
            }
        }
        Self::from_counts(first.resolution, counts)
    }
}

pub fn bev_histogram(cloud: &PointCloud, cfg: &BevConfig) -> Result<BevHistogram> {
    cfg.validate()?;
    let n = cfg.resolution;
    let cell = 2.0 * cfg.half_extent / n as f64;
    let mut counts = vec![0u64; n * n];
    let bin = |v: f64| -> Option<usize> {
        let i = ((v + cfg.half_extent) / cell).floor();
        (i >= 0.0 && i < n as f64).then_some(i as usize)
    };
    for p in cloud.points() {
        if let (Some(cx), Some(cy)) = (bin(p[0]), bin(p[1])) {
            counts[cy * n + cx] += 1;
        }
    }
    BevHistogram::from_counts(n, counts)
}

/// Jensen-Shannon divergence in bits; inputs are normalized first.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape("jsd", &[p.len()], &[q.len()]));
    }
    if p.iter().chain(q).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("jsd inputs must be finite and non-negative"));
    }
    let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
    if sp == 0.0 || sq == 0.0 {
        return Err(Error::invalid("jsd of an empty distribution"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// JSD between the aggregate histograms of two sets.
pub fn set_jsd(a: &[BevHistogram], b: &[BevHistogram]) -> Result<f64> {
    let (ha, hb) = (BevHistogram::aggregate(a)?, BevHistogram::aggregate(b)?);
    if ha.resolution != hb.resolution {
        return Err(Error::shape("set_jsd", &[ha.resolution], &[hb.resolution]));
    }
    jsd(&ha.probabilities(), &hb.probabilities())
}

/// Raw (unclamped) squared-MMD estimate and the bandwidth it used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdEstimate {
    pub value: f64,
    pub bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled set; 1 if it is zero.
pub fn median_bandwidth(vectors: &[&[f64]]) -> f64 {
    let mut d = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            d.push(sq_dist(vectors[i], vectors[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Unbiased squared MMD with `k(x, y) = exp(-|x - y|^2 / (2 s^2))`.
///
/// A set with a single element has no off-diagonal pairs; its within-set term
/// falls back to `k(x, x) = 1`.
pub fn mmd_gaussian_vectors(a: &[&[f64]], b: &[&[f64]], bandwidth: Option<f64>) -> Result<MmdEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mmd needs two non-empty sets"));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::invalid("mmd vectors must share one dimension"));
    }
    let s = match bandwidth {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("mmd bandwidth must be positive, got {s}"))),
        None => {
            let pooled: Vec<&[f64]> = a.iter().chain(b).copied().collect();
            median_bandwidth(&pooled)
        }
    };
    let k = |x: &[f64], y: &[f64]| (-sq_dist(x, y) / (2.0 * s * s)).exp();
    let within = |set: &[&[f64]]| -> f64 {
        let m = set.len();
        if m == 1 {
            return 1.0;
        }
        let mut t = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    t += k(set[i], set[j]);
                }
            }
        }
        t / (m * (m - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok(MmdEstimate {
        value: within(a) + within(b) - 2.0 * cross,
        bandwidth: s,
    })
}

/// MMD over flattened, normalized histograms.
pub fn mmd_gaussian(a: &[BevHistogram], b: &[BevHistogram], bandwidth: Option<f64>) -> Result<MmdEstimate> {
    let pa: Vec<Vec<f64>> = a.iter().map(BevHistogram::probabilities).collect();
    let pb: Vec<Vec<f64>> = b.iter().map(BevHistogram::probabilities).collect();
    let ra: Vec<&[f64]> = pa.iter().map(Vec::as_slice).collect();
    let rb: Vec<&[f64]> = pb.iter().map(Vec::as_slice).collect();
    mmd_gaussian_vectors(&ra, &rb, bandwidth)
}
