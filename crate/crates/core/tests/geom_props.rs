mod common;

use proptest::prelude::*;
use rangevq::geom::{
    decode_grid, encode_kitti_bin, encode_mask, encode_range, parse_kitti_bin, spherical_project, GridFile,
    PointCloud, ProjectionConfig, RangeImage, RaydropMask,
};

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-60.0..60.0f64, -60.0..60.0f64, -10.0..5.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_trip_bound(seed in any::<u64>()) {
        if let Err(e) = common::checks::projection_round_trip(seed) {
            panic!("{e}");
        }
    }

    #[test]
    fn spherical_projection_ignores_point_order(
        pts in prop::collection::vec(point(), 1..300),
        swaps in prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..50),
    ) {
        let cfg = ProjectionConfig::desk(16, 64);
        let mut shuffled = pts.clone();
        for (a, b) in swaps {
            let (i, j) = (a.index(shuffled.len()), b.index(shuffled.len()));
            shuffled.swap(i, j);
        }
        let (ia, ma, sa) = spherical_project(&PointCloud::new(pts).unwrap(), &cfg).unwrap();
        let (ib, mb, sb) = spherical_project(&PointCloud::new(shuffled).unwrap(), &cfg).unwrap();
        prop_assert_eq!(ia, ib);
        prop_assert_eq!(ma, mb);
        prop_assert_eq!(sa.projected, sb.projected);
    }

    #[test]
    fn projected_values_stay_in_unit_interval(pts in prop::collection::vec(point(), 1..300)) {
        let (img, mask, stats) = spherical_project(&PointCloud::new(pts.clone()).unwrap(), &ProjectionConfig::desk(16, 64)).unwrap();
        for (&v, &m) in img.values().iter().zip(mask.bits()) {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(m <= 1);
            if m == 0 {
                prop_assert_eq!(v, 0.0);
            }
        }
        prop_assert_eq!(stats.total, pts.len());
        prop_assert_eq!(stats.projected + stats.collisions + stats.out_of_range + stats.out_of_fov, pts.len());
        prop_assert_eq!(stats.projected, mask.bits().iter().filter(|&&b| b == 1).count());
    }

    #[test]
    fn kitti_records_round_trip(pts in prop::collection::vec(point(), 1..100)) {
        // records are f32; start from values that survive the narrowing
        let pts: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|c| c as f32 as f64)).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap().with_intensity(vec![0.5; pts.len()]).unwrap();
        let back = parse_kitti_bin(&encode_kitti_bin(&cloud)).unwrap();
        prop_assert_eq!(back.points(), &pts[..]);
    }

    #[test]
    fn grid_files_round_trip(h in 1usize..20, w in 1usize..40, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rangevq::rng::indexed(seed, "grid", 0);
        let cfg = ProjectionConfig::desk(h, w);
        let bits: Vec<u8> = (0..h * w).map(|_| r.gen_range(0..2)).collect();
        let values: Vec<f32> = bits.iter().map(|&b| if b == 1 { r.gen_range(0.0..1.0) } else { 0.0 }).collect();
        let img = RangeImage::new(values, cfg.clone()).unwrap();
        let mask = RaydropMask::new(h, w, bits).unwrap();
        let back = decode_grid(&encode_range(&img)).unwrap().into_range(&cfg).unwrap();
        prop_assert_eq!(back, img);
        match decode_grid(&encode_mask(&mask)).unwrap() {
            GridFile::Mask(_) => {}
            _ => prop_assert!(false, "mask decoded as a range grid"),
        }
        prop_assert_eq!(decode_grid(&encode_mask(&mask)).unwrap().into_mask().unwrap(), mask);
    }

    #[test]
    fn normalization_is_monotone(a in 1.0..80.0f64, b in 1.0..80.0f64) {
        for cfg in [ProjectionConfig::kitti360(), ProjectionConfig { normalization: rangevq::geom::NormalizationKind::Linear, ..ProjectionConfig::kitti360() }] {
            let (va, vb) = (cfg.normalize(a), cfg.normalize(b));
            prop_assert_eq!(a < b, va < vb);
            prop_assert!((cfg.denormalize(va) - a).abs() < 1e-9 * a.max(1.0));
        }
    }
}
