//! WebAssembly bindings for the demo page in `www/`.

use rangevq::geom::ProjectionConfig;
use rangevq::metrics::{bev_histogram, farthest_point_indices, set_jsd, BevConfig};
use rangevq::synth::{synth_scan, synth_scans, SceneSpec};
use wasm_bindgen::prelude::*;

pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 256;

fn spec(seed: u32, drop_base: f64, drop_range: f64) -> SceneSpec {
    SceneSpec {
        seed: seed as u64,
        drop_base,
        drop_range,
        ..SceneSpec::default()
    }
}

fn sensor() -> ProjectionConfig {
    ProjectionConfig::desk(HEIGHT, WIDTH)
}

fn js(e: rangevq::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA pixels (`HEIGHT x WIDTH`) of one synthetic scan: near returns bright,
/// far returns dark, dropped rays red.
#[wasm_bindgen(js_name = renderScan)]
pub fn render_scan(seed: u32, index: u32, drop_base: f64, drop_range: f64) -> Result<Vec<u8>, JsError> {
    let (_, scan) = synth_scan(&spec(seed, drop_base, drop_range), &sensor(), index as u64).map_err(js)?;
    let mut rgba = Vec::with_capacity(HEIGHT * WIDTH * 4);
    for (&v, &m) in scan.range.values().iter().zip(scan.mask.bits()) {
        if m == 0 {
            rgba.extend_from_slice(&[150, 30, 40, 255]);
        } else {
            let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))) as u8;
            rgba.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(rgba)
}

/// Interleaved `x, y` of `n` farthest-point samples of one scan's surviving points.
#[wasm_bindgen(js_name = fpsBev)]
pub fn fps_bev(seed: u32, index: u32, drop_base: f64, drop_range: f64, n: usize) -> Result<Vec<f32>, JsError> {
    let (raw, _) = synth_scan(&spec(seed, drop_base, drop_range), &sensor(), index as u64).map_err(js)?;
    let n = n.min(raw.cloud.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    let picked = farthest_point_indices(&raw.cloud, n, seed as u64).map_err(js)?;
    let pts = raw.cloud.points();
    Ok(picked.iter().flat_map(|&i| [pts[i][0] as f32, pts[i][1] as f32]).collect())
}

/// Set-level bird's-eye-view Jensen-Shannon divergence (bits) between `count`
/// scans of two scene seeds.
#[wasm_bindgen(js_name = compareScenes)]
pub fn compare_scenes(seed_a: u32, seed_b: u32, count: usize, drop_base: f64, drop_range: f64) -> Result<f64, JsError> {
    let bev = BevConfig::desk();
    let hists = |seed: u32| -> Result<Vec<_>, JsError> {
        let scans = synth_scans(&spec(seed, drop_base, drop_range), &sensor(), 0, count.max(1)).map_err(js)?;
        scans
            .iter()
            .map(|s| bev_histogram(&s.to_cloud()?, &bev))
            .collect::<Result<Vec<_>, _>>()
            .map_err(js)
    };
    set_jsd(&hists(seed_a)?, &hists(seed_b)?).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_has_one_pixel_per_ray() {
        assert_eq!(render_scan(1, 0, 0.05, 0.3).unwrap().len(), HEIGHT * WIDTH * 4);
    }

    #[test]
    fn same_seed_scenes_do_not_diverge() {
        assert_eq!(compare_scenes(3, 3, 2, 0.05, 0.3).unwrap(), 0.0);
        assert!(compare_scenes(3, 4, 2, 0.05, 0.3).unwrap() > 0.0);
    }

    #[test]
    fn fps_returns_xy_pairs() {
        assert_eq!(fps_bev(2, 0, 0.0, 0.0, 64).unwrap().len(), 128);
    }
}
