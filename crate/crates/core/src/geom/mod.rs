//! Point clouds, range images and the projections between them.

mod io;
mod projection;

pub use io::{
    decode_grid, encode_kitti_bin, encode_mask, encode_range, parse_kitti_bin, read_grid, read_kitti_bin,
    write_kitti_bin, write_mask,
    write_range, GridFile, IMG_MAGIC, IMG_VERSION,
};
pub use projection::{project, scan_unfold_project, spherical_project, unproject, ProjectionStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Ordered sensor-frame points; order is preserved exactly as read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    rings: Option<Vec<u32>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(Self {
            points,
            rings: None,
            intensity: None,
        })
    }

    /// Attaches a per-point laser ring index (scan-unfolding row).
    pub fn with_rings(mut self, rings: Vec<u32>) -> Result<Self> {
        if rings.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} ring indices for {} points",
                rings.len(),
                self.points.len()
            )));
        }
        self.rings = Some(rings);
        Ok(self)
    }

    pub fn with_intensity(mut self, intensity: Vec<f32>) -> Result<Self> {
        if intensity.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} intensities for {} points",
                intensity.len(),
                self.points.len()
            )));
        }
        self.intensity = Some(intensity);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn rings(&self) -> Option<&[u32]> {
        self.rings.as_deref()
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud with the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            rings: self.rings.as_ref().map(|r| indices.iter().map(|&i| r[i]).collect()),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    Spherical,
    ScanUnfold,
}

/// How scan unfolding splits the ordered stream into rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfoldConvention {
    /// Per-point ring indices when present, azimuth wrap otherwise.
    Auto,
    /// Rows are the (non-decreasing) per-point ring indices.
    Ring,
    /// A new row starts wherever azimuth jumps backwards by more than pi.
    AzimuthWrap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    Linear,
    Log,
}

/// Projection geometry. Angles in radians, ranges in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub mode: ProjectionMode,
    pub height: usize,
    pub width: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub normalization: NormalizationKind,
    /// `s` in `log(1 + r s) / log(1 + r_max s)`.
    pub log_scale: f64,
    pub unfold: UnfoldConvention,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::kitti360()
    }
}

impl ProjectionConfig {
    /// 64 x 1024 spherical projection with the common +3 / -25 degree vertical FOV.
    pub fn kitti360() -> Self {
        Self {
            mode: ProjectionMode::Spherical,
            height: 64,
            width: 1024,
            elevation_min: (-25.0f64).to_radians(),
            elevation_max: 3.0f64.to_radians(),
            range_min: 1.0,
            range_max: 80.0,
            normalization: NormalizationKind::Log,
            log_scale: 1.0,
            unfold: UnfoldConvention::Auto,
        }
    }

    /// 64 x 256 scan unfolding for HDL-64 odometry sweeps.
    pub fn kitti_odometry() -> Self {
        Self {
            mode: ProjectionMode::ScanUnfold,
            width: 256,
            elevation_min: (-24.8f64).to_radians(),
            elevation_max: 2.0f64.to_radians(),
            ..Self::kitti360()
        }
    }

    /// Small synthetic sensor used by the desk-scale presets.
    pub fn desk(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            range_max: 50.0,
            ..Self::kitti360()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "projection size must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.elevation_min < self.elevation_max) {
            return Err(Error::Config("elevation_min must be below elevation_max".into()));
        }
        if !(self.range_min > 0.0 && self.range_min < self.range_max && self.range_max.is_finite()) {
            return Err(Error::Config("range bounds must satisfy 0 < range_min < range_max".into()));
        }
        if self.normalization == NormalizationKind::Log && !(self.log_scale > 0.0) {
            return Err(Error::Config("log_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Range in meters to a normalized value in [0, 1].
    pub fn normalize(&self, r: f64) -> f64 {
        let v = match self.normalization {
            NormalizationKind::Linear => (r - self.range_min) / (self.range_max - self.range_min),
            NormalizationKind::Log => (r * self.log_scale).ln_1p() / (self.range_max * self.log_scale).ln_1p(),
        };
        v.clamp(0.0, 1.0)
    }

    /// Inverse of [`Self::normalize`].
    pub fn denormalize(&self, v: f64) -> f64 {
        match self.normalization {
            NormalizationKind::Linear => self.range_min + v * (self.range_max - self.range_min),
            NormalizationKind::Log => (v * (self.range_max * self.log_scale).ln_1p()).exp_m1() / self.log_scale,
        }
    }

    /// Largest range error caused by storing a normalized value as `f32`.
    pub fn range_quantization_step(&self) -> f64 {
        let slope = match self.normalization {
            NormalizationKind::Linear => self.range_max - self.range_min,
            // dr/dv is largest at r_max
            NormalizationKind::Log => {
                (self.range_max * self.log_scale).ln_1p() * (1.0 + self.range_max * self.log_scale) / self.log_scale
            }
        };
        slope * f32::EPSILON as f64
    }

    pub fn azimuth_bin_width(&self) -> f64 {
        std::f64::consts::TAU / self.width as f64
    }

    pub fn elevation_bin_width(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.height as f64
    }

    /// Column of an azimuth in [-pi, pi]; bin 0 starts at -pi.
    pub fn azimuth_bin(&self, theta: f64) -> usize {
        let t = (theta + std::f64::consts::PI) / std::f64::consts::TAU * self.width as f64;
        (t.floor().max(0.0) as usize) % self.width
    }

    /// Row of an elevation inside the FOV; row 0 is the top of the FOV.
    pub fn elevation_bin(&self, phi: f64) -> Option<usize> {
        if phi < self.elevation_min || phi > self.elevation_max {
            return None;
        }
        let t = (self.elevation_max - phi) / (self.elevation_max - self.elevation_min) * self.height as f64;
        Some((t.floor() as usize).min(self.height - 1))
    }

    pub fn azimuth_center(&self, col: usize) -> f64 {
        -std::f64::consts::PI + (col as f64 + 0.5) * self.azimuth_bin_width()
    }

    pub fn elevation_center(&self, row: usize) -> f64 {
        self.elevation_max - (row as f64 + 0.5) * self.elevation_bin_width()
    }
}

/// H x W grid of normalized ranges in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    values: Vec<f32>,
    config: ProjectionConfig,
}

impl RangeImage {
    pub fn new(values: Vec<f32>, config: ProjectionConfig) -> Result<Self> {
        if values.len() != config.pixels() {
            return Err(Error::shape("range_image", &[config.height, config.width], &[values.len()]));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("range value {bad} outside [0, 1]")));
        }
        Ok(Self { values, config })
    }

    /// Clamps arbitrary decoder output into [0, 1]; NaN becomes 0.
    pub fn from_unclamped(values: &[f32], config: ProjectionConfig) -> Result<Self> {
        let clamped = values
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(clamped, config)
    }

    pub fn zeros(config: ProjectionConfig) -> Self {
        Self {
            values: vec![0.0; config.pixels()],
            config,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.config.width + col]
    }
}

/// H x W binary grid; 1 marks a returned ray, 0 a dropped one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RaydropMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl RaydropMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("raydrop_mask", &[height, width], &[bits.len()]));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("raydrop mask must be binary"));
        }
        Ok(Self { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn occupancy(&self) -> f64 {
        self.bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.bits.len() as f64
    }

    /// Intersection over union of the returned (bit = 1) sets; 1 when both are empty.
    pub fn iou(&self, other: &RaydropMask) -> Result<f64> {
        if self.bits.len() != other.bits.len() {
            return Err(Error::shape("iou", &[self.height, self.width], &[other.height, other.width]));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}
