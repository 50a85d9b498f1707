//! Per-cluster Sinkhorn gradient flow and the end-to-end stylization pipeline.

use serde::{Deserialize, Serialize};

use crate::cloud::{FeatureMode, ResampleParams, WeightScheme};
use crate::register::FitOptions;
use crate::sinkhorn::SinkhornParams;
use crate::{Error, Result};

mod flow;
mod pipeline;

pub use flow::{
    adjust_scales, combined_objective, flow_cluster, surface_energy, surface_energy_gradient,
    writeback_aux, AuxChannel, ClusterFlowState, ObjectiveEval,
};
pub use pipeline::{stylize_scene, ClusterReport, ClusterStatus, StylizationReport};

/// Every knob of the pipeline. `gamma` and `lr` are in normalized feature
/// units: each cluster pair is centered on the content cluster and scaled to
/// unit RMS radius before matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylizationConfig {
    /// Number of k-means clusters for the content scene.
    pub clusters: usize,
    pub gamma: f64,
    pub feature_mode: FeatureMode,
    /// Style neighbors gathered per content Gaussian during selection.
    pub knn_k: usize,
    pub steps: usize,
    pub lr: f64,
    /// Weight of the surface energy, measured in normalized units.
    pub surface_energy_weight: f64,
    pub seed: u64,
    /// Bounds on the per-Gaussian scale factor after the flow.
    pub scale_adjust_clamp: [f64; 2],
    pub scale_adjust_k: usize,
    pub opacity_min: f64,
    pub outlier_sigma: f64,
    /// Optional uniform subsample of the content scene after filtering.
    pub resample_count: Option<usize>,
    /// RGB weight in the k-means feature space.
    pub cluster_color_weight: f64,
    pub min_cluster_size: usize,
    pub kmeans_max_iter: usize,
    pub registration_restarts: usize,
    pub registration_max_iter: usize,
    pub registration_tol: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Over-relaxation of the cross potentials during the flow, in `[1, 2)`.
    pub sinkhorn_relaxation: f64,
    /// Sinkhorn iterations per flow step once potentials are warm.
    pub flow_sinkhorn_iters: usize,
    /// Weight Gaussians by opacity instead of uniformly in the OT problems.
    pub opacity_weights: bool,
}

impl Default for StylizationConfig {
    fn default() -> Self {
        Self {
            clusters: 400,
            gamma: 0.05,
            feature_mode: FeatureMode::default(),
            knn_k: 3,
            steps: 200,
            lr: 0.02,
            surface_energy_weight: 0.0,
            seed: 0,
            scale_adjust_clamp: [0.5, 2.0],
            scale_adjust_k: 8,
            opacity_min: 0.3,
            outlier_sigma: 3.0,
            resample_count: None,
            cluster_color_weight: 0.3,
            min_cluster_size: 16,
            kmeans_max_iter: 100,
            registration_restarts: 8,
            registration_max_iter: 50,
            registration_tol: 1e-5,
            scale_min: 0.25,
            scale_max: 4.0,
            sinkhorn_max_iter: 1000,
            sinkhorn_tol: 1e-5,
            sinkhorn_relaxation: 1.5,
            flow_sinkhorn_iters: 3,
            opacity_weights: false,
        }
    }
}

impl StylizationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Contract(format!("{field}: {why}")));
        if self.clusters == 0 {
            return bad("clusters", "must be at least 1");
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma", "must be positive");
        }
        self.feature_mode
            .validate()
            .map_err(|e| Error::Contract(format!("feature_mode: {e}")))?;
        if self.knn_k == 0 {
            return bad("knn_k", "must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        if !(self.surface_energy_weight >= 0.0) || !self.surface_energy_weight.is_finite() {
            return bad("surface_energy_weight", "must be finite and nonnegative");
        }
        let [lo, hi] = self.scale_adjust_clamp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("scale_adjust_clamp", "must satisfy 0 < low <= high");
        }
        if self.scale_adjust_k == 0 {
            return bad("scale_adjust_k", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.opacity_min) {
            return bad("opacity_min", "must lie in [0, 1]");
        }
        if !(self.outlier_sigma > 0.0) {
            return bad("outlier_sigma", "must be positive");
        }
        if self.resample_count == Some(0) {
            return bad("resample_count", "must be positive when set");
        }
        if !(self.cluster_color_weight >= 0.0) || !self.cluster_color_weight.is_finite() {
            return bad("cluster_color_weight", "must be finite and nonnegative");
        }
        if self.min_cluster_size < crate::register::MIN_CLUSTER_POINTS {
            return bad("min_cluster_size", "must be at least 16 for registration");
        }
        if self.registration_restarts == 0 || self.registration_max_iter == 0 {
            return bad("registration_restarts", "restarts and iterations must be at least 1");
        }
        if !(self.registration_tol > 0.0) {
            return bad("registration_tol", "must be positive");
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return bad("scale_min", "must satisfy 0 < scale_min <= scale_max");
        }
        if self.sinkhorn_max_iter == 0 {
            return bad("sinkhorn_max_iter", "must be at least 1");
        }
        if !(self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol", "must be positive");
        }
        if !(1.0..2.0).contains(&self.sinkhorn_relaxation) {
            return bad("sinkhorn_relaxation", "must lie in [1, 2)");
        }
        if self.flow_sinkhorn_iters == 0 {
            return bad("flow_sinkhorn_iters", "must be at least 1");
        }
        Ok(())
    }

    pub fn sinkhorn_params(&self) -> SinkhornParams {
        SinkhornParams {
            gamma: self.gamma,
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
            anneal: true,
        }
    }

    pub fn fit_options(&self, cluster: usize) -> FitOptions {
        FitOptions {
            restarts: self.registration_restarts,
            max_iter: self.registration_max_iter,
            tol: self.registration_tol,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            seed: self.seed ^ cluster as u64,
        }
    }

    pub fn resample_params(&self) -> ResampleParams {
        ResampleParams {
            opacity_min: self.opacity_min,
            outlier_sigma: self.outlier_sigma,
            target_count: self.resample_count,
            seed: self.seed,
        }
    }

    pub fn weight_scheme(&self) -> WeightScheme {
        if self.opacity_weights {
            WeightScheme::Opacity
        } else {
            WeightScheme::Uniform
        }
    }
}
