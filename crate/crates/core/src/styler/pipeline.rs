use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{
    assemble_features, assemble_features_weighted, surface_resample_indices, FeatureMode, GaussianCloud,
};
use crate::partition::{kmeans, repair_small_clusters};
use crate::register::{apply_inverse, fit_similarity, select_style_cluster, SimilarityTransform};
use crate::spatial::KdTree;
use crate::{Error, Result};

use super::flow::{adjust_scales, flow_cluster, surface_energy, writeback_aux, ClusterFlowState};
use super::StylizationConfig;

/// Share of failed clusters at which the whole run is rejected.
const FAILURE_LIMIT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum ClusterStatus {
    Ok,
    /// Flow skipped or aborted; the un-flowed fragment was emitted.
    Fallback(String),
    /// No fragment could be produced.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    /// Indices into the input content cloud.
    pub content_indices: Vec<usize>,
    /// Indices into the style cloud, one per output Gaussian of this cluster.
    pub style_indices: Vec<usize>,
    /// First output Gaussian of this cluster.
    pub output_offset: usize,
    pub output_len: usize,
    pub k_used: usize,
    pub transform: Option<SimilarityTransform>,
    pub sd_initial: f64,
    pub sd_final: f64,
    pub steps: usize,
    pub best_step: usize,
    /// Scene units.
    pub surface_energy_before: f64,
    pub surface_energy_after: f64,
    pub status: ClusterStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizationReport {
    pub clusters: Vec<ClusterReport>,
    /// Sum of per-cluster divergences over clusters that ran the flow.
    pub total_sd_initial: f64,
    pub total_sd_final: f64,
    pub content_count: usize,
    pub resampled_count: usize,
    pub output_count: usize,
    pub wall_time_seconds: f64,
    pub config: StylizationConfig,
}

impl StylizationReport {
    pub fn failed_clusters(&self) -> usize {
        self.clusters.iter().filter(|c| c.status != ClusterStatus::Ok).count()
    }
}

struct Outcome {
    fragment: Option<GaussianCloud>,
    report: ClusterReport,
}

fn empty_report(cluster: usize, content_indices: Vec<usize>) -> ClusterReport {
    ClusterReport {
        cluster,
        content_indices,
        style_indices: Vec::new(),
        output_offset: 0,
        output_len: 0,
        k_used: 0,
        transform: None,
        sd_initial: f64::NAN,
        sd_final: f64::NAN,
        steps: 0,
        best_step: 0,
        surface_energy_before: 0.0,
        surface_energy_after: 0.0,
        status: ClusterStatus::Ok,
    }
}

fn run_cluster(
    ci: usize,
    total: usize,
    members: &[usize],
    content: &GaussianCloud,
    style: &GaussianCloud,
    style_tree: &KdTree,
    cfg: &StylizationConfig,
) -> Outcome {
    let content_indices: Vec<usize> = members.to_vec();
    let mut report = empty_report(ci, content_indices);
    let cluster = content.subset(members);
    let positions = cluster.positions();

    let staged = fit_similarity(&positions, style_tree, &cfg.fit_options(ci))
        .and_then(|t| select_style_cluster(ci, &t, &positions, style_tree, cfg.knn_k));
    let assignment = match staged {
        Ok(a) => a,
        Err(e) => {
            report.status = ClusterStatus::Failed(e.to_string());
            return Outcome { fragment: None, report };
        }
    };
    report.k_used = assignment.k_used;
    report.transform = Some(assignment.transform.clone());
    report.style_indices = assignment.style_indices.clone();
    let fragment = apply_inverse(&assignment.transform, &style.subset(&assignment.style_indices));

    let flowed = (|| -> Result<(GaussianCloud, ClusterFlowState)> {
        let target = assemble_features_weighted(&cluster, cfg.feature_mode, None, cfg.weight_scheme())?;
        let state = ClusterFlowState::new(fragment.clone(), cfg.feature_mode);
        let state = flow_cluster(state, &target, cfg)?;
        if let Some(flag) = &state.flag {
            return Err(Error::Numeric(flag.clone()));
        }
        let out = writeback_aux(&state, cfg.feature_mode);
        let out = adjust_scales(&state, out, cfg.scale_adjust_k, cfg.scale_adjust_clamp);
        Ok((out, state))
    })();
    match flowed {
        Ok((out, state)) => {
            report.sd_initial = state.sd_history[0];
            report.sd_final = state.sd_final;
            report.steps = state.sd_history.len() - 1;
            report.best_step = state.best_step;
            report.surface_energy_after = surface_energy(&state);
            info!(
                "cluster {}/{} sd0={:.6e} sd1={:.6e} steps={}",
                ci + 1,
                total,
                report.sd_initial,
                report.sd_final,
                report.steps
            );
            Outcome { fragment: Some(out), report }
        }
        Err(e) => {
            warn!("cluster {}: falling back to the unflowed fragment: {e}", ci + 1);
            report.status = ClusterStatus::Fallback(e.to_string());
            Outcome {
                fragment: Some(fragment),
                report,
            }
        }
    }
}

/// Replace `content` with style Gaussians flowed cluster by cluster onto it.
pub fn stylize_scene(
    content: &GaussianCloud,
    style: &GaussianCloud,
    cfg: &StylizationConfig,
) -> Result<(GaussianCloud, StylizationReport)> {
    let start = Instant::now();
    cfg.validate()?;
    if content.is_empty() || style.is_empty() {
        return Err(Error::EmptyScene);
    }
    let kept = surface_resample_indices(content, &cfg.resample_params())?;
    let resampled = content.subset(&kept);
    if cfg.clusters > resampled.len() {
        return Err(Error::Contract(format!(
            "clusters = {} exceeds the {} Gaussians left after resampling",
            cfg.clusters,
            resampled.len()
        )));
    }
    info!("content {} -> {} after resampling", content.len(), resampled.len());

    let features = assemble_features(
        &resampled,
        FeatureMode::CoordsRgb {
            weight: cfg.cluster_color_weight,
        },
        None,
    )?;
    let partition = kmeans(&features, cfg.clusters, cfg.seed, cfg.kmeans_max_iter)?;
    let partition = repair_small_clusters(&partition, &features, cfg.min_cluster_size)?;
    let members = partition.members();
    info!("{} clusters after repair", partition.k);

    let style_tree = KdTree::new(style.positions());
    let outcomes: Vec<Outcome> = members
        .par_iter()
        .enumerate()
        .map(|(ci, m)| {
            let mut o = run_cluster(ci, partition.k, m, &resampled, style, &style_tree, cfg);
            o.report.content_indices = m.iter().map(|&i| kept[i]).collect();
            o
        })
        .collect();

    let failed = outcomes.iter().filter(|o| o.report.status != ClusterStatus::Ok).count();
    if failed as f64 >= FAILURE_LIMIT * outcomes.len() as f64 {
        let (first, reason) = outcomes
            .iter()
            .find_map(|o| match &o.report.status {
                ClusterStatus::Ok => None,
                ClusterStatus::Fallback(r) | ClusterStatus::Failed(r) => Some((o.report.cluster, r.clone())),
            })
            .unwrap_or_default();
        return Err(Error::Pipeline {
            failed,
            total: outcomes.len(),
            first,
            reason,
        });
    }

    let mut gaussians = Vec::new();
    let mut reports = Vec::with_capacity(outcomes.len());
    let (mut l0, mut l1) = (0.0, 0.0);
    for o in outcomes {
        let mut r = o.report;
        r.output_offset = gaussians.len();
        if let Some(f) = o.fragment {
            r.output_len = f.len();
            gaussians.extend(f.gaussians);
        }
        if r.status == ClusterStatus::Ok {
            l0 += r.sd_initial;
            l1 += r.sd_final;
        }
        reports.push(r);
    }
    let output = GaussianCloud::with_layout(gaussians, Arc::clone(&style.layout));
    let report = StylizationReport {
        clusters: reports,
        total_sd_initial: l0,
        total_sd_final: l1,
        content_count: content.len(),
        resampled_count: resampled.len(),
        output_count: output.len(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    info!(
        "total divergence {:.6e} -> {:.6e}, {} Gaussians, {:.1}s",
        report.total_sd_initial, report.total_sd_final, report.output_count, report.wall_time_seconds
    );
    Ok((output, report))
}
