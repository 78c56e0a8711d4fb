//! Paired range/mask scans on disk.
//!
//! A scan directory holds `<stem>.range.lgi` / `<stem>.mask.lgi` pairs in the
//! grid format, or KITTI-style `<stem>.bin` clouds that are projected on load.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::{self, PointCloud, ProjectionConfig, RangeImage, RaydropMask};

/// A range image with its raydrop mask; `range` holds the composite (0 where dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub range: RangeImage,
    pub mask: RaydropMask,
}

impl Scan {
    pub fn new(range: RangeImage, mask: RaydropMask) -> Result<Self> {
        if (range.height(), range.width()) != (mask.height(), mask.width()) {
            return Err(Error::shape(
                "scan",
                &[range.height(), range.width()],
                &[mask.height(), mask.width()],
            ));
        }
        Ok(Self { range, mask })
    }

    pub fn from_cloud(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<Self> {
        let (range, mask, _) = geom::project(cloud, cfg)?;
        Self::new(range, mask)
    }

    pub fn to_cloud(&self) -> Result<PointCloud> {
        geom::unproject(&self.range, &self.mask)
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        geom::write_range(&self.range, &dir.join(format!("{stem}.range.lgi")))?;
        geom::write_mask(&self.mask, &dir.join(format!("{stem}.mask.lgi")))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads every scan in `dir`, sorted by file name. A `.bin` cloud whose stem
/// also has a grid pair is skipped; the grids win.
pub fn read_scan_dir(dir: &Path, cfg: &ProjectionConfig) -> Result<Vec<Scan>> {
    let entries = sorted_entries(dir)?;
    let name_of = |p: &PathBuf| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let gridded: std::collections::HashSet<String> = entries
        .iter()
        .filter_map(|p| name_of(p).strip_suffix(".range.lgi").map(str::to_string))
        .collect();
    let mut scans = Vec::new();
    for path in &entries {
        let name = name_of(path);
        if let Some(stem) = name.strip_suffix(".range.lgi") {
            let range = geom::read_grid(path)?.into_range(cfg)?;
            let mask_path = dir.join(format!("{stem}.mask.lgi"));
            let mask = geom::read_grid(&mask_path)?.into_mask()?;
            scans.push(Scan::new(range, mask)?);
        } else if let Some(stem) = name.strip_suffix(".bin") {
            if !gridded.contains(stem) {
                scans.push(Scan::from_cloud(&geom::read_kitti_bin(path)?, cfg)?);
            }
        }
    }
    if scans.is_empty() {
        return Err(Error::invalid(format!("no scans found in {}", dir.display())));
    }
    Ok(scans)
}

pub fn write_scan_dir(scans: &[Scan], dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in scans.iter().enumerate() {
        s.write(dir, &format!("{prefix}_{i:05}"))?;
    }
    Ok(())
}
