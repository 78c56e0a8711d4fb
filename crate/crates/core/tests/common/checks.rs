//! Comparisons of library results against the oracles in the parent module.
//! Each returns `Err` with a diagnostic on the first mismatch so the same code
//! serves the per-module tests and the acceptance report.

use rand::Rng;

use super::*;
use rangevq::autodiff::{Graph, Tensor};
use rangevq::geom::PointCloud;
use rangevq::metrics::{
    chamfer, emd, farthest_point_indices, farthest_point_indices_from, fpd, jsd, min_matching_distance,
    mmd_gaussian, patch_descriptors, projection_directions, sliced_wasserstein, swd, wasserstein_1d_sorted,
    BevHistogram, ImageRef, MatchBase, SwdConfig,
};
use rangevq::transformer::{sequence_nll, Autoregressive};
use rangevq::vqvae::nearest_codes;

pub type Check = std::result::Result<(), String>;

fn close(what: &str, got: f64, want: f64, tol: f64) -> Check {
    if (got - want).abs() <= tol && got.is_finite() {
        Ok(())
    } else {
        Err(format!("{what}: got {got:.15e}, oracle {want:.15e}, tolerance {tol:e}"))
    }
}

/// Quantizer against the expanded-form nearest neighbour, for K = 64 on an
/// 8 x 8 latent and K = 256 on a batch.
pub fn quantizer() -> Check {
    let mut r = rng("quantizer oracle");
    for &(k, d, n, h, w) in &[(64usize, 4usize, 1usize, 8usize, 8usize), (256, 8, 3, 4, 8)] {
        let cb: Vec<f64> = (0..k * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n * d * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = nearest_codes(
            &Tensor::new(vec![k, d], cb.clone()).unwrap(),
            &Tensor::new(vec![n, d, h, w], z.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let want = nearest_oracle(&cb, k, d, &z, n, h * w);
        if got != want {
            return Err(format!("quantizer K={k}: token grids differ"));
        }
    }
    Ok(())
}

/// FPS against exhaustive recompute on random 64-point clouds, n = 8 and the
/// full ordering n = 64; the seeded variant must start at its drawn index.
pub fn fps() -> Check {
    let mut r = rng("fps oracle");
    for trial in 0..20u64 {
        let pts = random_points(64, 10.0, &mut r);
        let first = r.gen_range(0..64);
        for n in [8, 64] {
            let got = farthest_point_indices_from(&pts, n, first).map_err(|e| e.to_string())?;
            if got != fps_oracle(&pts, n, first) {
                return Err(format!("fps trial {trial}, n={n}: selections differ"));
            }
        }
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let seeded = farthest_point_indices(&cloud, 8, trial).map_err(|e| e.to_string())?;
        if seeded != fps_oracle(&pts, 8, seeded[0]) {
            return Err(format!("seeded fps trial {trial} differs from its oracle"));
        }
    }
    Ok(())
}

/// `p(s_i | s_<i)` from a fixed table indexed by position and previous token.
pub struct TableModel {
    pub k: usize,
    pub len: usize,
    /// `[len][k + 1][k]`, row `k` is used at position 0.
    pub table: Vec<Vec<Vec<f64>>>,
}

impl TableModel {
    pub fn random(k: usize, len: usize, name: &str) -> Self {
        let mut r = rng(name);
        let table = (0..len)
            .map(|_| {
                (0..=k)
                    .map(|_| {
                        let w: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
                        let s: f64 = w.iter().sum();
                        w.into_iter().map(|v| v / s).collect()
                    })
                    .collect()
            })
            .collect();
        Self { k, len, table }
    }

    pub fn prob(&self, seq: &[u16]) -> f64 {
        let mut p = 1.0;
        let mut prev = self.k;
        for (i, &t) in seq.iter().enumerate() {
            p *= self.table[i][prev][t as usize];
            prev = t as usize;
        }
        p
    }
}

impl Autoregressive for TableModel {
    fn vocab(&self) -> usize {
        self.k
    }
    fn seq_len(&self) -> usize {
        self.len
    }
    fn next_log_probs(&self, prefix: &[u16]) -> rangevq::Result<Vec<f64>> {
        let prev = prefix.last().map_or(self.k, |&t| t as usize);
        Ok(self.table[prefix.len()][prev].iter().map(|p| p.ln()).collect())
    }
}

/// NLL by enumeration: the hand-specified factorized K = 3, two-position
/// case, a conditional table with K = 4 and length 6, and the transformer's
/// teacher-forced loss against the product of its own next-token
/// distributions (K = 3, length 5).
pub fn nll_enumeration() -> Check {
    // factorized: p(s0) = (0.5, 0.3, 0.2), p(s1) = (0.1, 0.6, 0.3)
    let factorized = TableModel {
        k: 3,
        len: 2,
        table: vec![vec![vec![0.5, 0.3, 0.2]; 4], vec![vec![0.1, 0.6, 0.3]; 4]],
    };
    let marg: [[f64; 3]; 2] = [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]];
    let all = all_sequences(3, 2);
    let mut total = 0.0;
    for s in &all {
        let p = marg[0][s[0] as usize] * marg[1][s[1] as usize];
        total += p;
        let got = sequence_nll(&factorized, std::slice::from_ref(s)).map_err(|e| e.to_string())?;
        close(&format!("factorized nll {s:?}"), got, -p.ln() / 2.0, 1e-10)?;
    }
    close("factorized mass", total, 1.0, 1e-12)?;
    let mean: f64 = all.iter().map(|s| -(marg[0][s[0] as usize] * marg[1][s[1] as usize]).ln()).sum::<f64>() / 18.0;
    close("factorized set nll", sequence_nll(&factorized, &all).map_err(|e| e.to_string())?, mean, 1e-10)?;

    let table = TableModel::random(4, 6, "nll table");
    let mut mass = 0.0;
    for s in all_sequences(4, 6) {
        let p = table.prob(&s);
        mass += p;
        let got = sequence_nll(&table, std::slice::from_ref(&s)).map_err(|e| e.to_string())?;
        close("table nll", got, -p.ln() / 6.0, 1e-10)?;
    }
    close("table mass", mass, 1.0, 1e-10)?;

    let model = tiny_transformer(false, 3, 5, "chain rule transformer");
    let mut mass = 0.0;
    for s in all_sequences(3, 5) {
        let mut g = Graph::new();
        let b = model.params().bind_frozen(&mut g);
        let l = model.nll_loss(&mut g, &b, std::slice::from_ref(&s)).map_err(|e| e.to_string())?;
        let joint = (-5.0 * g.value(l).item()).exp();
        let mut product = 1.0;
        for i in 0..5 {
            product *= model.next_token_distribution(&s[..i]).map_err(|e| e.to_string())?[s[i] as usize];
        }
        close(&format!("chain rule {s:?}"), joint, product, 1e-12)?;
        mass += joint;
    }
    close("transformer mass", mass, 1.0, 1e-10)
}

/// MMD on 3 vs 3 histograms of 4 cells by direct summation, with a fixed
/// bandwidth and with the median heuristic recomputed independently.
pub fn mmd() -> Check {
    let a = [[4u64, 1, 0, 3], [2, 2, 2, 2], [0, 5, 1, 2]];
    let b = [[1u64, 0, 6, 1], [3, 3, 1, 1], [0, 0, 4, 4]];
    let hist = |rows: &[[u64; 4]]| -> Vec<BevHistogram> {
        rows.iter().map(|c| BevHistogram::from_counts(2, c.to_vec()).unwrap()).collect()
    };
    let norm = |rows: &[[u64; 4]]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|c| {
                let s: u64 = c.iter().sum();
                c.iter().map(|&v| v as f64 / s as f64).collect()
            })
            .collect()
    };
    let (pa, pb) = (norm(&a), norm(&b));
    for s in [0.1, 0.35, 2.0] {
        let got = mmd_gaussian(&hist(&a), &hist(&b), Some(s)).map_err(|e| e.to_string())?;
        close(&format!("mmd s={s}"), got.value, mmd_oracle(&pa, &pb, s), 1e-12)?;
    }
    let mut d: Vec<f64> = Vec::new();
    let pooled: Vec<&Vec<f64>> = pa.iter().chain(&pb).collect();
    for i in 0..6 {
        for j in i + 1..6 {
            d.push(pooled[i].iter().zip(pooled[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2]; // 15 pairs
    let got = mmd_gaussian(&hist(&a), &hist(&b), None).map_err(|e| e.to_string())?;
    close("median bandwidth", got.bandwidth, median, 1e-15)?;
    close("mmd median", got.value, mmd_oracle(&pa, &pb, median), 1e-12)
}

/// JSD against the entropy form, including the two-cell closed form.
pub fn jsd_closed_form() -> Check {
    let got = jsd(&[0.5, 0.5], &[0.9, 0.1]).map_err(|e| e.to_string())?;
    let want = jsd_oracle(&[0.5, 0.5], &[0.9, 0.1]);
    close("jsd (.5,.5) vs (.9,.1)", got, want, 1e-12)?;
    // 1.5 - ... written out: H(.7,.3) - (1 + H(.9,.1)) / 2
    let h = |p: f64| -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
    close("jsd two-cell closed form", got, h(0.7) - 0.5 * (1.0 + h(0.9)), 1e-12)?;
    let mut r = rng("jsd oracle");
    for _ in 0..50 {
        let p: Vec<f64> = (0..9).map(|_| r.gen_range(0.0..1.0)).collect();
        let q: Vec<f64> = (0..9).map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..1.0) }).collect();
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        let pn: Vec<f64> = p.iter().map(|v| v / sp).collect();
        let qn: Vec<f64> = q.iter().map(|v| v / sq).collect();
        close("jsd random", jsd(&p, &q).map_err(|e| e.to_string())?, jsd_oracle(&pn, &qn), 1e-12)?;
    }
    close("jsd disjoint", jsd(&[1.0, 0.0], &[0.0, 1.0]).map_err(|e| e.to_string())?, 1.0, 1e-15)
}

/// FPD on correlated 5-D Gaussian samples against the Denman-Beavers oracle.
pub fn frechet() -> Check {
    let mut r = rng("fpd oracle");
    let gauss = |r: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let (u1, u2): (f64, f64) = (1.0 - r.gen::<f64>(), r.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    for trial in 0..5 {
        let mix_a: Vec<f64> = (0..25).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mix_b: Vec<f64> = (0..25).map(|_| r.gen_range(-1.0..1.0)).collect();
        let sample = |mix: &[f64], shift: f64, r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..200)
                .map(|_| {
                    let e: Vec<f64> = (0..5).map(|_| gauss(r)).collect();
                    (0..5).map(|i| shift + (0..5).map(|j| mix[i * 5 + j] * e[j]).sum::<f64>()).collect()
                })
                .collect()
        };
        let a = sample(&mix_a, 0.0, &mut r);
        let b = sample(&mix_b, 0.3 * trial as f64, &mut r);
        let got = fpd(&a, &b).map_err(|e| e.to_string())?;
        close(&format!("fpd trial {trial}"), got, frechet_oracle(&a, &b), 1e-8)?;
        close("fpd self", fpd(&a, &a).map_err(|e| e.to_string())?, 0.0, 1e-8)?;
    }
    Ok(())
}

/// Sorted-coupling W1 against the minimum over all permutations (n = 8).
pub fn wasserstein_1d() -> Check {
    let mut r = rng("w1 oracle");
    for _ in 0..10 {
        let mut a: Vec<f64> = (0..8).map(|_| r.gen_range(-3.0..3.0)).collect();
        let mut b: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..5.0)).collect();
        let want = w1_permutation_oracle(&a, &b);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        close("w1", wasserstein_1d_sorted(&a, &b), want, 1e-12)?;
    }
    Ok(())
}

/// Adding `c` to every pixel shifts each projection by `c * sum(d)`, so the
/// per-direction W1 is `|c * sum(d)|`. Checked on 16 patches per direction
/// with a sorted-coupling oracle, then through the full two-level metric.
fn image_refs(set: &[Vec<f32>], height: usize, width: usize) -> Vec<ImageRef<'_>> {
    set.iter().map(|d| ImageRef { height, width, data: d }).collect()
}

pub fn swd_constant_shift() -> Check {
    let mut r = rng("swd oracle");
    // dyadic pixel values keep the shift and the pyramid exact in f32
    let (h, w) = (16, 64);
    let images: Vec<Vec<f32>> = (0..4).map(|_| (0..h * w).map(|_| r.gen_range(0..=128) as f32 / 256.0).collect()).collect();
    let c = 0.125f32;
    let shifted: Vec<Vec<f32>> = images.iter().map(|im| im.iter().map(|v| v + c).collect()).collect();
    let cfg = SwdConfig { patches_per_level: 16, levels: 1, ..SwdConfig::default() };
    let dim = cfg.patch_size * cfg.patch_size;
    let da = patch_descriptors(&image_refs(&images[..1], h, w), &cfg, 9).map_err(|e| e.to_string())?;
    let db = patch_descriptors(&image_refs(&shifted[..1], h, w), &cfg, 9).map_err(|e| e.to_string())?;
    let dirs = projection_directions(dim, 32, 9, 0);
    let mut expected = 0.0;
    for k in 0..32 {
        let d = &dirs[k * dim..(k + 1) * dim];
        let proj = |set: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = set.chunks(dim).map(|x| x.iter().zip(d).map(|(p, q)| p * q).sum()).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (pa, pb) = (proj(&da[0]), proj(&db[0]));
        let coupled = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / pa.len() as f64;
        let analytic = (c as f64 * d.iter().sum::<f64>()).abs();
        close("shift per direction", coupled, analytic, 1e-12)?;
        expected += analytic / 32.0;
    }
    let got = sliced_wasserstein(&da[0], &db[0], dim, &dirs).map_err(|e| e.to_string())?;
    close("sliced shift", got, expected, 1e-12)?;

    let full = SwdConfig::default();
    let got = swd(&image_refs(&images, h, w), &image_refs(&shifted, h, w), &full, 4).map_err(|e| e.to_string())?;
    let want: f64 = (0..full.levels)
        .map(|level| {
            let dirs = projection_directions(dim, full.projections, 4, level);
            dirs.chunks(dim).map(|d| (c as f64 * d.iter().sum::<f64>()).abs()).sum::<f64>() / full.projections as f64
        })
        .sum::<f64>()
        / full.levels as f64;
    close("swd shift", got, want, 1e-12)
}

/// Chamfer, EMD and minimum matching distance on small sets against
/// exhaustive evaluation.
pub fn matching() -> Check {
    let mut r = rng("md oracle");
    let gen: Vec<Vec<Point3>> = (0..3).map(|_| random_points(6, 2.0, &mut r)).collect();
    let real: Vec<Vec<Point3>> = (0..3).map(|_| random_points(6, 2.0, &mut r)).collect();
    for (a, b) in gen.iter().zip(&real) {
        close("chamfer", chamfer(a, b).map_err(|e| e.to_string())?, chamfer_oracle(a, b), 1e-12)?;
        // EMD over all 720 assignments
        let mut best = f64::INFINITY;
        for perm in permutations(6) {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| dist2(&a[i], &b[j]).sqrt()).sum::<f64>() / 6.0;
            best = best.min(c);
        }
        close("emd", emd(a, b).map_err(|e| e.to_string())?, best, 1e-12)?;
    }
    let clouds = |s: &[Vec<Point3>]| -> Vec<PointCloud> { s.iter().map(|p| PointCloud::new(p.clone()).unwrap()).collect() };
    let got = min_matching_distance(&clouds(&gen), &clouds(&real), MatchBase::Chamfer).map_err(|e| e.to_string())?;
    close("md", got, md_oracle(&gen, &real), 1e-12)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Every oracle comparison, named.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("quantizer", quantizer()),
        ("fps", fps()),
        ("nll enumeration", nll_enumeration()),
        ("mmd", mmd()),
        ("jsd", jsd_closed_form()),
        ("fpd", frechet()),
        ("w1", wasserstein_1d()),
        ("swd shift", swd_constant_shift()),
        ("matching", matching()),
    ]
}

/// One random round-trip case: a random sensor, at most one in-bounds point per
/// bin (kept away from bin edges so the oracle binning is unambiguous), plus
/// stray points outside the range or the FOV. Checks the angular and range
/// bounds of `unproject(spherical_project(c))`, mask consistency and that no
/// stray point survives.
pub fn projection_round_trip(seed: u64) -> Check {
    use rangevq::geom::{spherical_project, unproject, NormalizationKind, ProjectionConfig};
    use std::f64::consts::{PI, TAU};

    let mut r = rangevq::rng::indexed(0x7e57, "round trip", seed);
    let lo_deg = r.gen_range(-40.0..0.0);
    let cfg = ProjectionConfig {
        height: r.gen_range(1..=32),
        width: r.gen_range(4..=512),
        elevation_min: f64::to_radians(lo_deg),
        elevation_max: f64::to_radians(lo_deg + r.gen_range(5.0..40.0)),
        range_min: r.gen_range(0.5..2.0),
        range_max: r.gen_range(20.0..120.0),
        normalization: if r.gen_bool(0.5) { NormalizationKind::Log } else { NormalizationKind::Linear },
        log_scale: r.gen_range(0.1..2.0),
        ..ProjectionConfig::kitti360()
    };
    let (h, w) = (cfg.height, cfg.width);
    let (dt, dp) = (TAU / w as f64, (cfg.elevation_max - cfg.elevation_min) / h as f64);
    let dir = |theta: f64, phi: f64, range: f64| -> Point3 {
        [range * phi.cos() * theta.cos(), range * phi.cos() * theta.sin(), range * phi.sin()]
    };
    let occupancy = r.gen_range(0.05..0.9);
    let mut truth: Vec<Option<(f64, f64, f64)>> = vec![None; h * w];
    let mut pts = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if !r.gen_bool(occupancy) {
                continue;
            }
            let theta = -PI + (col as f64 + r.gen_range(0.02..0.98)) * dt;
            let phi = cfg.elevation_max - (row as f64 + r.gen_range(0.02..0.98)) * dp;
            let range = r.gen_range(cfg.range_min * 1.001..cfg.range_max * 0.999);
            truth[row * w + col] = Some((theta, phi, range));
            pts.push(dir(theta, phi, range));
        }
    }
    // strays: too close, too far, above and below the FOV
    for _ in 0..r.gen_range(0..20) {
        let theta = r.gen_range(-PI..PI);
        let (phi, range) = match r.gen_range(0..4) {
            0 => (cfg.elevation_min + 0.5 * dp, cfg.range_min * 0.5),
            1 => (cfg.elevation_min + 0.5 * dp, cfg.range_max * 1.5),
            2 => (cfg.elevation_max + 0.05, 0.5 * (cfg.range_min + cfg.range_max)),
            _ => (cfg.elevation_min - 0.05, 0.5 * (cfg.range_min + cfg.range_max)),
        };
        pts.push(dir(theta, phi, range));
    }
    if pts.is_empty() {
        pts.push(dir(0.0, cfg.elevation_max + 0.1, cfg.range_min * 2.0));
    }
    // shuffle so input order carries no information
    for i in (1..pts.len()).rev() {
        pts.swap(i, r.gen_range(0..=i));
    }
    let cloud = PointCloud::new(pts).map_err(|e| e.to_string())?;
    let (img, mask, _) = spherical_project(&cloud, &cfg).map_err(|e| e.to_string())?;
    for (i, t) in truth.iter().enumerate() {
        if mask.bits()[i] != u8::from(t.is_some()) {
            return Err(format!("case {seed}: mask bit {i} is {} but the oracle says {}", mask.bits()[i], t.is_some()));
        }
        if t.is_none() && img.values()[i] != 0.0 {
            return Err(format!("case {seed}: empty pixel {i} carries {}", img.values()[i]));
        }
    }
    let back = unproject(&img, &mask).map_err(|e| e.to_string())?;
    let expected = truth.iter().filter(|t| t.is_some()).count();
    if back.len() != expected {
        return Err(format!("case {seed}: {} points back, {expected} in bounds", back.len()));
    }
    let q = cfg.range_quantization_step();
    let occupied = truth.iter().flatten();
    for (p, &(theta, phi, range)) in back.points().iter().zip(occupied) {
        let rr = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let tt = p[1].atan2(p[0]);
        let pp = p[2].atan2(p[0].hypot(p[1]));
        let mut d_theta = (tt - theta).abs();
        d_theta = d_theta.min(TAU - d_theta);
        let eps = 1e-9;
        if d_theta > PI / w as f64 + eps {
            return Err(format!("case {seed}: azimuth error {d_theta:e} > pi/W"));
        }
        if (pp - phi).abs() > dp / 2.0 + eps {
            return Err(format!("case {seed}: elevation error {:e} > half a bin", (pp - phi).abs()));
        }
        if (rr - range).abs() > q + 1e-12 * range {
            return Err(format!("case {seed}: range error {:e} > step {q:e}", (rr - range).abs()));
        }
    }
    Ok(())
}
