//! Per-point geometric descriptors feeding the 2D expert.

pub mod depth;
pub mod features2d;
pub mod fpfh;

pub use depth::{render_depth, DepthImage};
pub use features2d::{assemble_f2, extract_2d_features, DepthStatistics, STATS_PER_SCALE};
pub use fpfh::{compute_fpfh, FpfhDescriptor, FPFH_LEN};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{build_index, PointCloud};

/// How the FPFH support radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpfhRadius {
    Fixed(f64),
    /// A multiple of the cloud's median nearest-neighbor spacing.
    SpacingMultiple(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Feature2dConfig {
    /// Depth image `(height, width)`.
    pub resolution: (usize, usize),
    pub scales: Vec<usize>,
    pub fpfh_radius: FpfhRadius,
}

impl Default for Feature2dConfig {
    fn default() -> Self {
        Feature2dConfig {
            resolution: (128, 128),
            scales: vec![1, 2, 4],
            fpfh_radius: FpfhRadius::SpacingMultiple(4.0),
        }
    }
}

impl Feature2dConfig {
    pub fn feature_dim(&self) -> usize {
        STATS_PER_SCALE * self.scales.len() + FPFH_LEN
    }
}

#[derive(Debug, Clone)]
pub struct Feature2dOutput {
    pub features: Vec<Vec<f64>>,
    pub fpfh_radius: f64,
    pub isolated_points: usize,
    pub empty_windows: usize,
}

/// Full 2D-expert feature pipeline: depth rendering, window statistics and FPFH.
pub fn point_features_2d(cloud: &PointCloud, config: &Feature2dConfig) -> Result<Feature2dOutput> {
    let radius = match config.fpfh_radius {
        FpfhRadius::Fixed(r) => r,
        FpfhRadius::SpacingMultiple(f) => {
            let spacing = cloud.median_spacing(&build_index(cloud)?);
            if spacing > 0.0 {
                f * spacing
            } else {
                f
            }
        }
    };
    let img = render_depth(cloud, config.resolution)?;
    let stats = extract_2d_features(&img, &config.scales)?;
    let fpfh = compute_fpfh(cloud, radius)?;
    let features = assemble_f2(&stats, &fpfh.descriptors)?;
    Ok(Feature2dOutput {
        features,
        fpfh_radius: radius,
        isolated_points: fpfh.isolated,
        empty_windows: stats.empty_windows,
    })
}
