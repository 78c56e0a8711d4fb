//! Frechet distance between Gaussian fits of per-cloud feature vectors.
//!
//! Features are a fixed statistic vector rather than a learned embedding, so the
//! resulting numbers are labeled FPD* and are only comparable within this crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub const RANGE_BINS: usize = 16;
/// Centroid (3), second moments (6), range histogram, octant occupancy (8).
pub const FEATURE_DIM: usize = 3 + 6 + RANGE_BINS + 8;

/// Point-count-normalized statistics of one cloud. Ranges beyond `range_max`
/// fall in the last histogram bin; an empty cloud maps to all zeros.
pub fn cloud_features(cloud: &PointCloud, range_max: f64) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    let pts = cloud.points();
    if pts.is_empty() {
        return f;
    }
    let n = pts.len() as f64;
    let mut mean = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    f[..3].copy_from_slice(&mean);
    const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    for p in pts {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for (slot, &(i, j)) in PAIRS.iter().enumerate() {
            f[3 + slot] += d[i] * d[j] / n;
        }
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let bin = ((r / range_max * RANGE_BINS as f64) as usize).min(RANGE_BINS - 1);
        f[9 + bin] += 1.0 / n;
        let oct = (p[0] >= 0.0) as usize | ((p[1] >= 0.0) as usize) << 1 | ((p[2] >= 0.0) as usize) << 2;
        f[9 + RANGE_BINS + oct] += 1.0 / n;
    }
    f
}

/// Mean and unbiased covariance of a feature sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows must be non-empty and of equal length"));
        }
        if rows.len() < dim {
            return Err(Error::invalid(format!(
                "{} samples cannot estimate a {dim}-dimensional covariance",
                rows.len()
            )));
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        let mean = DVector::from_fn(dim, |j, _| x.column(j).sum() / n as f64);
        let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        Ok(Self { mean, cov, count: n })
    }

    /// Exact Gaussian parameters, for closed-form checks.
    pub fn from_moments(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d || d == 0 {
            return Err(Error::shape("feature stats", &[cov.len()], &[d, d]));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            count: 0,
        })
    }
}

/// Principal square root of a symmetric positive semi-definite matrix.
fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let tol = 1e-9 * hi.abs().max(1.0);
    if !lo.is_finite() || !hi.is_finite() || lo < -tol {
        return Err(Error::Numerical(format!(
            "{what} is not positive semi-definite: eigenvalues span [{lo:.3e}, {hi:.3e}]"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the cross term
/// taken as `tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))`, which shares its eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::shape("fpd", &[a.mean.len()], &[b.mean.len()]));
    }
    let root_a = sqrt_psd(&a.cov, "covariance A")?;
    let inner = &root_a * &b.cov * &root_a;
    let cross = sqrt_psd(&inner, "covariance product")?.trace();
    let d = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// FPD* between two sets of clouds.
pub fn fpd(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&FeatureStats::from_features(set_a)?, &FeatureStats::from_features(set_b)?)
}
