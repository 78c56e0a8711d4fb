//! Deterministic corridor scenes with a parametric raydrop process.

mod scene;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use scene::{generate_scan, RayRecord, Scene, SceneSpec, Surface, SyntheticScan};

use crate::dataset::Scan;
use crate::error::{Error, Result};
use crate::geom::{self, ProjectionConfig};
use crate::par;

/// One written scan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub cloud: String,
    pub range: String,
    pub mask: String,
    pub points: usize,
}

/// Written as `manifest.toml` next to the scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_hash: String,
    pub seed: u64,
    pub count: usize,
    pub spec: SceneSpec,
    pub sensor: ProjectionConfig,
    pub scans: Vec<ManifestEntry>,
}

/// SHA-256 over the canonical TOML of the generator inputs.
pub fn spec_hash(spec: &SceneSpec, sensor: &ProjectionConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Inputs<'a> {
        spec: &'a SceneSpec,
        sensor: &'a ProjectionConfig,
    }
    let text = toml::to_string(&Inputs { spec, sensor }).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates and projects scan `index`.
pub fn synth_scan(spec: &SceneSpec, sensor: &ProjectionConfig, index: u64) -> Result<(SyntheticScan, Scan)> {
    let raw = generate_scan(spec, sensor, index)?;
    let scan = if raw.cloud.is_empty() {
        Scan::new(
            geom::RangeImage::zeros(*sensor),
            geom::RaydropMask::zeros(sensor.height, sensor.width),
        )?
    } else {
        Scan::from_cloud(&raw.cloud, sensor)?
    };
    Ok((raw, scan))
}

/// In-memory scans `start..start + count`.
pub fn synth_scans(spec: &SceneSpec, sensor: &ProjectionConfig, start: u64, count: usize) -> Result<Vec<Scan>> {
    par::map_indexed(count, |i| synth_scan(spec, sensor, start + i as u64).map(|(_, s)| s))
        .into_iter()
        .collect()
}

/// Writes scans `start..start + count` to `out_dir` as KITTI-style clouds plus
/// projected range/mask grids, and a manifest.
pub fn generate_dataset(
    spec: &SceneSpec,
    sensor: &ProjectionConfig,
    start: u64,
    count: usize,
    out_dir: &Path,
) -> Result<Manifest> {
    spec.validate()?;
    sensor.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = par::map_indexed(count, |i| -> Result<ManifestEntry> {
        let index = start + i as u64;
        let (raw, scan) = synth_scan(spec, sensor, index)?;
        let stem = format!("scan_{index:05}");
        let cloud = format!("{stem}.bin");
        geom::write_kitti_bin(&raw.cloud, &out_dir.join(&cloud))?;
        scan.write(out_dir, &stem)?;
        Ok(ManifestEntry {
            index,
            cloud,
            range: format!("{stem}.range.lgi"),
            mask: format!("{stem}.mask.lgi"),
            points: raw.cloud.len(),
        })
    });
    let manifest = Manifest {
        spec_hash: spec_hash(spec, sensor)?,
        seed: spec.seed,
        count,
        spec: spec.clone(),
        sensor: *sensor,
        scans: entries.into_iter().collect::<Result<_>>()?,
    };
    let path = out_dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads the projected grids listed in a dataset manifest.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Scan>)> {
    let path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let scans = manifest
        .scans
        .iter()
        .map(|e| {
            let range = geom::read_grid(&dir.join(&e.range))?.into_range(&manifest.sensor)?;
            let mask = geom::read_grid(&dir.join(&e.mask))?.into_mask()?;
            Scan::new(range, mask)
        })
        .collect::<Result<_>>()?;
    Ok((manifest, scans))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_reproducible() {
        let spec = SceneSpec::default();
        let sensor = ProjectionConfig::desk(8, 32);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&spec, &sensor, 0, 3, a.path()).unwrap();
        let mb = generate_dataset(&spec, &sensor, 0, 3, b.path()).unwrap();
        assert_eq!(ma, mb);
        for e in &ma.scans {
            for f in [&e.cloud, &e.range, &e.mask] {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
        let (m, scans) = read_dataset(a.path()).unwrap();
        assert_eq!(m, ma);
        assert_eq!(scans, synth_scans(&spec, &sensor, 0, 3).unwrap());
        let mut other = spec.clone();
        other.seed = 1;
        assert_ne!(spec_hash(&spec, &sensor).unwrap(), spec_hash(&other, &sensor).unwrap());
    }
}
