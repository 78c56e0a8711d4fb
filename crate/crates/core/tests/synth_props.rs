use rangevq::geom::{scan_unfold_project, spherical_project, ProjectionConfig, ProjectionMode, RaydropMask};
use rangevq::synth::{generate_scan, SceneSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn closed(drop_base: f64, drop_range: f64) -> SceneSpec {
    SceneSpec {
        closed: true,
        drop_base,
        drop_range,
        ..SceneSpec::default()
    }
}

#[test]
fn drop_rate_matches_binomial_count() {
    let sensor = ProjectionConfig::desk(64, 256);
    let spec = closed(0.2, 0.0);
    let (mut hits, mut drops) = (0usize, 0usize);
    for i in 0..10 {
        let s = generate_scan(&spec, &sensor, i).unwrap();
        hits += s.hits();
        drops += s.drops();
    }
    let rate = drops as f64 / hits as f64;
    assert!(hits > 150_000, "{hits}");
    assert!((rate - 0.2).abs() < 0.01, "empirical drop rate {rate}");
}

#[test]
fn dense_scan_occupancy_is_one_minus_drop_rate() {
    let sensor = ProjectionConfig::desk(64, 1024);
    let s = generate_scan(&closed(0.2, 0.0), &sensor, 7).unwrap();
    assert_eq!(s.hits(), sensor.pixels());
    let (_, mask, _) = spherical_project(&s.cloud, &sensor).unwrap();
    assert!((mask.occupancy() - 0.8).abs() < 0.02, "{}", mask.occupancy());
}

#[test]
fn emitted_points_lie_on_their_surfaces() {
    let sensor = ProjectionConfig::desk(32, 128);
    for i in 0..4 {
        let s = generate_scan(&SceneSpec::default(), &sensor, i).unwrap();
        let kept = s.rays.iter().filter(|r| r.hit.is_some() && !r.dropped);
        let mut n = 0;
        for (ray, p) in kept.zip(s.cloud.points()) {
            let (_, surface) = ray.hit.unwrap();
            let res = s.scene.residual(*p, surface);
            assert!(res < 1e-6, "scan {i} ray ({}, {}) residual {res}", ray.row, ray.col);
            n += 1;
        }
        assert_eq!(n, s.cloud.len());
    }
}

/// Given its range, whether a hit drops must not depend on where the ray
/// points. Observed drops per azimuth sector are compared with the expected
/// count `sum p(r)`; the statistic `sum (O - E)^2 / V` is asymptotically
/// chi-square with one degree of freedom per sector.
#[test]
fn raydrop_is_independent_of_azimuth_given_range() {
    let sensor = ProjectionConfig::desk(64, 256);
    let spec = SceneSpec::default();
    let sectors = 16;
    let mut observed = vec![0.0; sectors];
    let mut expected = vec![0.0; sectors];
    let mut variance = vec![0.0; sectors];
    let mut rays = 0usize;
    let mut i = 0;
    while rays < 100_000 {
        let s = generate_scan(&spec, &sensor, i).unwrap();
        for ray in &s.rays {
            rays += 1;
            let Some((r, _)) = ray.hit else { continue };
            let p = spec.drop_base + spec.drop_range * r / sensor.range_max;
            let k = ray.col * sectors / sensor.width;
            observed[k] += f64::from(u8::from(ray.dropped));
            expected[k] += p;
            variance[k] += p * (1.0 - p);
        }
        i += 1;
    }
    let stat: f64 = (0..sectors).map(|k| (observed[k] - expected[k]).powi(2) / variance[k]).sum();
    let critical = ChiSquared::new(sectors as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat:.2} over the 99% point {critical:.2}");
}

#[test]
fn unfolded_rows_match_generated_elevation_index() {
    let sensor = ProjectionConfig {
        mode: ProjectionMode::ScanUnfold,
        ..ProjectionConfig::desk(16, 64)
    };
    for i in 0..4 {
        let s = generate_scan(&SceneSpec::default(), &sensor, i).unwrap();
        let (_, mask, _) = scan_unfold_project(&s.cloud, &sensor).unwrap();
        let mut bits = vec![0u8; sensor.pixels()];
        for ray in s.rays.iter().filter(|r| r.hit.is_some() && !r.dropped) {
            bits[ray.row * sensor.width + ray.col] = 1;
        }
        assert_eq!(mask, RaydropMask::new(16, 64, bits).unwrap(), "scan {i}");
    }
}

#[test]
fn scans_are_reproducible_per_index() {
    let sensor = ProjectionConfig::desk(16, 64);
    let spec = SceneSpec::default();
    let a = generate_scan(&spec, &sensor, 11).unwrap();
    let b = generate_scan(&spec, &sensor, 11).unwrap();
    assert_eq!(a.cloud, b.cloud);
    let c = generate_scan(&spec, &sensor, 12).unwrap();
    assert_ne!(a.cloud, c.cloud);
}
