use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GaussianCloud;
use crate::spatial::mean_knn_distance;
use crate::{Error, Result};

const OUTLIER_K: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleParams {
    pub opacity_min: f64,
    /// Drop Gaussians whose mean 8-NN distance exceeds `median + sigma * MAD`.
    pub outlier_sigma: f64,
    pub target_count: Option<usize>,
    pub seed: u64,
}

impl Default for ResampleParams {
    fn default() -> Self {
        Self {
            opacity_min: 0.3,
            outlier_sigma: 3.0,
            target_count: None,
            seed: 0,
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Indices (ascending) of the Gaussians kept by [`surface_resample`].
pub fn surface_resample_indices(cloud: &GaussianCloud, params: &ResampleParams) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let total = cloud.len();
    let mut kept: Vec<usize> = (0..total)
        .filter(|&i| cloud.gaussians[i].opacity >= params.opacity_min)
        .collect();
    let below_opacity = total - kept.len();

    let mut outliers = 0;
    if params.outlier_sigma.is_finite() && kept.len() > 1 {
        let positions: Vec<[f64; 3]> = kept.iter().map(|&i| cloud.gaussians[i].position).collect();
        let dist = mean_knn_distance(&positions, OUTLIER_K);
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let mut dev: Vec<f64> = sorted.iter().map(|d| (d - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let threshold = med + params.outlier_sigma * median(&dev);
        let before = kept.len();
        kept = kept
            .into_iter()
            .zip(&dist)
            .filter(|(_, &d)| d <= threshold)
            .map(|(i, _)| i)
            .collect();
        outliers = before - kept.len();
    }

    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter {
            total,
            below_opacity,
            outliers,
        });
    }

    if let Some(target) = params.target_count {
        if target == 0 {
            return Err(Error::Contract("target_count must be positive".into()));
        }
        if target < kept.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let mut pick = index::sample(&mut rng, kept.len(), target).into_vec();
            pick.sort_unstable();
            kept = pick.into_iter().map(|j| kept[j]).collect();
        }
    }
    Ok(kept)
}

/// Keep opaque, non-floating Gaussians, optionally subsampled.
pub fn surface_resample(cloud: &GaussianCloud, params: &ResampleParams) -> Result<GaussianCloud> {
    let kept = surface_resample_indices(cloud, params)?;
    Ok(cloud.subset(&kept))
}
