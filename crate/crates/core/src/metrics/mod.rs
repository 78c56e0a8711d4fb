//! Evaluation suite: patch SWD on range images, MMD and JSD on bird's-eye-view
//! histograms, point-set JSD, FPD* and minimum-matching distance on clouds.

mod bev;
mod fpd;
mod pointset;
mod report;
mod swd;

pub use bev::{
    bev_histogram, jsd, median_bandwidth, mmd_gaussian, mmd_gaussian_vectors, set_jsd, BevConfig, BevHistogram,
    MmdEstimate,
};
pub use fpd::{cloud_features, fpd, frechet_distance, FeatureStats, FEATURE_DIM, RANGE_BINS};
pub use pointset::{
    assignment, chamfer, emd, farthest_point_indices, farthest_point_indices_from, farthest_point_sample,
    match_distance, min_matching_distance, MatchBase,
};
pub use report::{evaluate, MetricReport, MetricsConfig, REPORT_CSV_HEADER};
pub use swd::{patch_descriptors, projection_directions, sliced_wasserstein, swd, wasserstein_1d_sorted, ImageRef, SwdConfig};
