use super::{PointCloud, ProjectionConfig, ProjectionMode, RangeImage, RaydropMask, UnfoldConvention};
use crate::error::{Error, Result};

/// Bookkeeping for one projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub total: usize,
    pub projected: usize,
    pub out_of_range: usize,
    pub out_of_fov: usize,
    /// Points that landed in an already occupied bin.
    pub collisions: usize,
}

struct Binner<'a> {
    cfg: &'a ProjectionConfig,
    best: Vec<f64>,
    stats: ProjectionStats,
}

impl<'a> Binner<'a> {
    fn new(cfg: &'a ProjectionConfig, total: usize) -> Self {
        Self {
            cfg,
            best: vec![f64::INFINITY; cfg.pixels()],
            stats: ProjectionStats {
                total,
                ..Default::default()
            },
        }
    }

    fn in_range(&mut self, r: f64) -> bool {
        let ok = r >= self.cfg.range_min && r <= self.cfg.range_max;
        if !ok {
            self.stats.out_of_range += 1;
        }
        ok
    }

    /// Nearest return wins.
    fn insert(&mut self, row: usize, col: usize, r: f64) {
        let slot = &mut self.best[row * self.cfg.width + col];
        if slot.is_finite() {
            self.stats.collisions += 1;
        } else {
            self.stats.projected += 1;
        }
        if r < *slot {
            *slot = r;
        }
    }

    fn finish(self) -> Result<(RangeImage, RaydropMask, ProjectionStats)> {
        let mut values = vec![0.0f32; self.best.len()];
        let mut bits = vec![0u8; self.best.len()];
        for (i, &r) in self.best.iter().enumerate() {
            if r.is_finite() {
                values[i] = self.cfg.normalize(r) as f32;
                bits[i] = 1;
            }
        }
        let img = RangeImage::new(values, *self.cfg)?;
        let mask = RaydropMask::new(self.cfg.height, self.cfg.width, bits)?;
        Ok((img, mask, self.stats))
    }
}

fn check_input(cloud: &PointCloud, cfg: &ProjectionConfig, mode: ProjectionMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(Error::Config(format!("projection mode is {:?}, expected {mode:?}", cfg.mode)));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(index) = cloud.points().iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinitePoint { index });
    }
    Ok(())
}

fn spherical(p: &[f64; 3]) -> (f64, f64, f64) {
    let [x, y, z] = *p;
    let planar = x.hypot(y);
    ((planar * planar + z * z).sqrt(), y.atan2(x), z.atan2(planar))
}

/// Spherical projection: azimuth into `width` bins over [-pi, pi), elevation
/// into `height` bins over the configured FOV.
pub fn spherical_project(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
) -> Result<(RangeImage, RaydropMask, ProjectionStats)> {
    check_input(cloud, cfg, ProjectionMode::Spherical)?;
    let mut binner = Binner::new(cfg, cloud.len());
    for p in cloud.points() {
        let (r, theta, phi) = spherical(p);
        if !binner.in_range(r) {
            continue;
        }
        let Some(row) = cfg.elevation_bin(phi) else {
            binner.stats.out_of_fov += 1;
            continue;
        };
        binner.insert(row, cfg.azimuth_bin(theta), r);
    }
    binner.finish()
}

/// Row index of every point of an ordered sweep.
fn unfold_rows(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<Vec<usize>> {
    let convention = match (cfg.unfold, cloud.rings()) {
        (UnfoldConvention::Auto, Some(_)) | (UnfoldConvention::Ring, _) => UnfoldConvention::Ring,
        _ => UnfoldConvention::AzimuthWrap,
    };
    let rows: Vec<usize> = match convention {
        UnfoldConvention::Ring => {
            let rings = cloud
                .rings()
                .ok_or_else(|| Error::invalid("ring convention needs per-point ring indices"))?;
            if let Some(w) = rings.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::invalid(format!(
                    "ring indices decrease at point {}; rows are not contiguous",
                    w + 1
                )));
            }
            rings.iter().map(|&r| r as usize).collect()
        }
        _ => {
            let mut row = 0usize;
            let mut prev: Option<f64> = None;
            cloud
                .points()
                .iter()
                .map(|p| {
                    let theta = p[1].atan2(p[0]);
                    if let Some(last) = prev {
                        if theta - last < -std::f64::consts::PI {
                            row += 1;
                        }
                    }
                    prev = Some(theta);
                    row
                })
                .collect()
        }
    };
    let n_rows = rows.last().map_or(0, |&r| r + 1);
    let fits = match convention {
        UnfoldConvention::Ring => n_rows <= cfg.height,
        _ => n_rows == cfg.height,
    };
    if !fits {
        return Err(Error::invalid(format!(
            "ordered cloud of {} points splits into {n_rows} rows, expected {}",
            cloud.len(),
            cfg.height
        )));
    }
    Ok(rows)
}

/// Scan unfolding: the ordered stream is cut into `height` contiguous rows;
/// inside a row points are binned by azimuth exactly as in [`spherical_project`].
pub fn scan_unfold_project(
    cloud: &PointCloud,
    cfg: &ProjectionConfig,
) -> Result<(RangeImage, RaydropMask, ProjectionStats)> {
    check_input(cloud, cfg, ProjectionMode::ScanUnfold)?;
    let rows = unfold_rows(cloud, cfg)?;
    let mut binner = Binner::new(cfg, cloud.len());
    for (p, &row) in cloud.points().iter().zip(&rows) {
        let (r, theta, _) = spherical(p);
        if !binner.in_range(r) {
            continue;
        }
        binner.insert(row, cfg.azimuth_bin(theta), r);
    }
    binner.finish()
}

/// Dispatches on `cfg.mode`.
pub fn project(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<(RangeImage, RaydropMask, ProjectionStats)> {
    match cfg.mode {
        ProjectionMode::Spherical => spherical_project(cloud, cfg),
        ProjectionMode::ScanUnfold => scan_unfold_project(cloud, cfg),
    }
}

/// One point per returned pixel, at the bin-center angles and the denormalized
/// range. Scan-unfolded rows use the nominal elevation of their row.
pub fn unproject(img: &RangeImage, mask: &RaydropMask) -> Result<PointCloud> {
    if img.height() != mask.height() || img.width() != mask.width() {
        return Err(Error::shape(
            "unproject",
            &[img.height(), img.width()],
            &[mask.height(), mask.width()],
        ));
    }
    let cfg = img.config();
    let mut points = Vec::new();
    let mut rings = Vec::new();
    for row in 0..cfg.height {
        let phi = cfg.elevation_center(row);
        let (sp, cp) = phi.sin_cos();
        for col in 0..cfg.width {
            if !mask.get(row, col) {
                continue;
            }
            let theta = cfg.azimuth_center(col);
            let r = cfg.denormalize(img.get(row, col) as f64);
            let (st, ct) = theta.sin_cos();
            points.push([r * cp * ct, r * cp * st, r * sp]);
            rings.push(row as u32);
        }
    }
    PointCloud::new(points)?.with_rings(rings)
}
