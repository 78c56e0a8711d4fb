use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bev::{bev_histogram, mmd_gaussian, set_jsd, BevConfig, BevHistogram};
use super::fpd::{cloud_features, fpd, FEATURE_DIM};
use super::pointset::{farthest_point_indices, min_matching_distance, MatchBase};
use super::swd::{swd, ImageRef, SwdConfig};
use crate::dataset::Scan;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::par;
use crate::rng::mix64;

/// Every protocol constant of the evaluation; serialized into each report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub seed: u64,
    pub swd: SwdConfig,
    pub bev: BevConfig,
    /// Gaussian kernel width over normalized histograms; median heuristic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd_bandwidth: Option<f64>,
    /// Farthest-point subsample size for the point-set metrics.
    pub fps_points: usize,
    pub match_base: MatchBase,
    /// Upper edge of the FPD* range histogram (meters).
    pub feature_range_max: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            swd: SwdConfig::default(),
            bev: BevConfig::desk(),
            mmd_bandwidth: None,
            fps_points: 512,
            match_base: MatchBase::Chamfer,
            feature_range_max: 50.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.swd.validate()?;
        self.bev.validate()?;
        if let Some(s) = self.mmd_bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("mmd_bandwidth must be positive, got {s}")));
            }
        }
        if self.fps_points == 0 {
            return Err(Error::Config("fps_points must be positive".into()));
        }
        if !(self.feature_range_max > 0.0 && self.feature_range_max.is_finite()) {
            return Err(Error::Config("feature_range_max must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Named metric values with the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fingerprint: String,
    pub generated: usize,
    pub reference: usize,
    /// Clouds left out of the BEV metrics because no point fell inside the grid.
    pub excluded_empty: usize,
    pub values: BTreeMap<String, f64>,
    /// MMD before clamping at zero.
    pub mmd_raw: f64,
    pub mmd_bandwidth: f64,
    pub notes: Vec<String>,
    pub config: MetricsConfig,
}

pub const REPORT_CSV_HEADER: &str = "metric,value";

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for (k, v) in &self.values {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("report serialization: {e}")))
    }

    /// `report.csv` and `report.toml` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join("report.toml");
        std::fs::write(&txt, self.to_text()?).map_err(|e| Error::io(&txt, e))
    }
}

fn image_refs<'a>(imgs: &'a [Vec<f32>], scans: &[Scan]) -> Vec<ImageRef<'a>> {
    imgs.iter()
        .zip(scans)
        .map(|(d, x)| ImageRef {
            height: x.range.height(),
            width: x.range.width(),
            data: d,
        })
        .collect()
}

struct SetView {
    hists: Vec<BevHistogram>,
    subsampled: Vec<PointCloud>,
    features: Vec<Vec<f64>>,
}

/// Subsampling seeds depend only on the position in the set, so identical
/// sets are subsampled identically.
fn view(scans: &[Scan], cfg: &MetricsConfig) -> Result<SetView> {
    let clouds = scans.iter().map(Scan::to_cloud).collect::<Result<Vec<_>>>()?;
    let hists = clouds.iter().map(|c| bev_histogram(c, &cfg.bev)).collect::<Result<Vec<_>>>()?;
    let subsampled = par::map_indexed(clouds.len(), |i| -> Result<PointCloud> {
        let c = &clouds[i];
        if c.is_empty() {
            return Ok(c.clone());
        }
        let seed = mix64(cfg.seed ^ mix64(i as u64));
        Ok(c.select(&farthest_point_indices(c, cfg.fps_points.min(c.len()), seed)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let features = clouds.iter().map(|c| cloud_features(c, cfg.feature_range_max)).collect();
    Ok(SetView {
        hists,
        subsampled,
        features,
    })
}

/// Range-image SWD (x100), BEV MMD and JSD, point JSD on the subsampled clouds,
/// FPD* and minimum-matching distance of `generated` against `reference`.
pub fn evaluate(generated: &[Scan], reference: &[Scan], cfg: &MetricsConfig) -> Result<MetricReport> {
    cfg.validate()?;
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::invalid("evaluation needs non-empty generated and reference sets"));
    }
    let mut values = BTreeMap::new();
    let mut notes = Vec::new();

    let images = |s: &[Scan]| -> Vec<Vec<f32>> { s.iter().map(|x| x.range.values().to_vec()).collect() };
    let (ia, ib) = (images(generated), images(reference));
    let swd_raw = swd(&image_refs(&ia, generated), &image_refs(&ib, reference), &cfg.swd, cfg.seed)?;
    values.insert("swd_x100".to_string(), 100.0 * swd_raw);

    let (ga, gb) = (view(generated, cfg)?, view(reference, cfg)?);
    let keep = |h: &[BevHistogram]| -> Vec<BevHistogram> { h.iter().filter(|x| !x.is_empty()).cloned().collect() };
    let (ha, hb) = (keep(&ga.hists), keep(&gb.hists));
    let excluded_empty = ga.hists.len() + gb.hists.len() - ha.len() - hb.len();
    if excluded_empty > 0 {
        notes.push(format!("{excluded_empty} clouds with no point inside the BEV grid were excluded"));
    }
    if ha.is_empty() || hb.is_empty() {
        return Err(Error::invalid("every cloud of one set falls outside the BEV grid"));
    }
    let mmd = mmd_gaussian(&ha, &hb, cfg.mmd_bandwidth)?;
    values.insert("mmd_bev".to_string(), mmd.value.max(0.0));
    values.insert("jsd_bev".to_string(), set_jsd(&ha, &hb)?);

    let sub_hist = |v: &SetView| -> Result<Vec<BevHistogram>> {
        let h = v.subsampled.iter().map(|c| bev_histogram(c, &cfg.bev)).collect::<Result<Vec<_>>>()?;
        Ok(keep(&h))
    };
    values.insert("jsd_points".to_string(), set_jsd(&sub_hist(&ga)?, &sub_hist(&gb)?)?);

    if ga.features.len() >= FEATURE_DIM && gb.features.len() >= FEATURE_DIM {
        values.insert("fpd_star".to_string(), fpd(&ga.features, &gb.features)?);
    } else {
        notes.push(format!("fpd_star skipped: needs at least {FEATURE_DIM} clouds per set"));
    }

    let non_empty = |v: &SetView| -> Vec<PointCloud> { v.subsampled.iter().filter(|c| !c.is_empty()).cloned().collect() };
    let (sa, sb) = (non_empty(&ga), non_empty(&gb));
    let md_name = match cfg.match_base {
        MatchBase::Chamfer => "md_chamfer",
        MatchBase::Emd => "md_emd",
    };
    if cfg.match_base == MatchBase::Emd && sa.iter().chain(&sb).any(|c| c.len() != cfg.fps_points) {
        notes.push(format!("{md_name} skipped: some clouds have fewer than {} points", cfg.fps_points));
    } else if sa.is_empty() || sb.is_empty() {
        notes.push(format!("{md_name} skipped: a set has only empty clouds"));
    } else {
        values.insert(md_name.to_string(), min_matching_distance(&sa, &sb, cfg.match_base)?);
    }

    if let Some((k, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("metric {k} is not finite ({v})")));
    }
    Ok(MetricReport {
        fingerprint: cfg.fingerprint(),
        generated: generated.len(),
        reference: reference.len(),
        excluded_empty,
        values,
        mmd_raw: mmd.value,
        mmd_bandwidth: mmd.bandwidth,
        notes,
        config: cfg.clone(),
    })
}
