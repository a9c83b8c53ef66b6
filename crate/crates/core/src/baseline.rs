//! The classical "threshold and cluster" vegetation segmenter.
//!
//! A pixel is a vegetation candidate when green dominates both other channels
//! by more than `green_dominance_margin` and its excess-green value
//! `2G - R - B` exceeds `excess_green_threshold`. Candidate components smaller
//! than `min_cluster_area` are then removed as specks.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::imaging::{RasterImage, VegetationMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub green_dominance_margin: u8,
    /// Applied to `2G - R - B`; may be negative.
    pub excess_green_threshold: i32,
    pub min_cluster_area: usize,
    pub connectivity: Connectivity,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            green_dominance_margin: 0,
            excess_green_threshold: 10,
            min_cluster_area: 100,
            connectivity: Connectivity::Four,
        }
    }
}

impl BaselineConfig {
    #[inline]
    pub fn is_green(&self, [r, g, b]: [u8; 3]) -> bool {
        let (r, g, b) = (r as i32, g as i32, b as i32);
        let margin = self.green_dominance_margin as i32;
        g > r + margin && g > b + margin && 2 * g - r - b > self.excess_green_threshold
    }
}

pub fn threshold_green(img: &RasterImage, cfg: &BaselineConfig) -> VegetationMask {
    let bits = img.rgb_pixels().map(|p| cfg.is_green(p)).collect();
    VegetationMask::new(img.width(), img.height(), bits).expect("one bit per pixel")
}

/// Clears every connected component whose area is below
/// `cfg.min_cluster_area`. Surviving bits are untouched.
pub fn filter_clusters(mask: &VegetationMask, cfg: &BaselineConfig) -> VegetationMask {
    if cfg.min_cluster_area <= 1 {
        return mask.clone();
    }
    let labeling = label_components(mask, cfg.connectivity);
    let bits = labeling
        .labels
        .iter()
        .map(|&l| l != 0 && labeling.areas[l as usize - 1] >= cfg.min_cluster_area)
        .collect();
    VegetationMask::new(mask.width(), mask.height(), bits).expect("same dimensions")
}

pub fn segment(img: &RasterImage, cfg: &BaselineConfig) -> VegetationMask {
    filter_clusters(&threshold_green(img, cfg), cfg)
}
