//! Per-cluster registration into the style scene.
//!
//! A content cluster is mapped by `x ↦ diag(S)·R·(x − t)`, fitted by
//! alternating nearest-neighbor correspondences with closed-form updates of
//! `t`, `R` (weighted Procrustes) and the per-axis scales `S`. The selected style
//! sub-cloud is the union of the `k` nearest style Gaussians of every mapped
//! cluster point.

use nalgebra::{Matrix3, Quaternion, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Gaussian, GaussianCloud};
use crate::spatial::KdTree;
use crate::{Error, Result};

/// Smallest cluster `fit_similarity` accepts.
pub const MIN_CLUSTER_POINTS: usize = 16;
/// Selection keeps doubling `k` until it finds this many style Gaussians.
pub const MIN_SELECTION: usize = 16;
const MAX_DOUBLINGS: usize = 4;
const MIN_SELECTION_HARD: usize = 4;
const ROTATION_PASSES: usize = 20;
/// Block-coordinate passes per set of correspondences.
const BLOCK_PASSES: usize = 10;
/// Sign patterns of the principal-axis alignments tried after identity.
const AXIS_FLIPS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub translation: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    /// Sum over cluster points of the distance to the nearest style point.
    pub objective: f64,
    /// Set when the cluster covariance is rank deficient and `S` was kept isotropic.
    #[serde(default)]
    pub degenerate: bool,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [1.0; 3],
            objective: 0.0,
            degenerate: false,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_unit(self.rotation).to_rotation_matrix().into_inner()
    }

    /// `diag(S)·R·(x − t)`.
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let v = r * (Vector3::from(x) - Vector3::from(self.translation));
        [self.scale[0] * v[0], self.scale[1] * v[1], self.scale[2] * v[2]]
    }

    /// `Rᵀ·diag(S)⁻¹·y + t`.
    pub fn apply_inverse_point(&self, y: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let u = Vector3::new(y[0] / self.scale[0], y[1] / self.scale[1], y[2] / self.scale[2]);
        let x = r.transpose() * u + Vector3::from(self.translation);
        [x[0], x[1], x[2]]
    }

    /// Geometric-mean scale `(S_x S_y S_z)^(1/3)`.
    pub fn lambda(&self) -> f64 {
        (self.scale[0] * self.scale[1] * self.scale[2]).cbrt()
    }
}

fn quat_to_unit(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn unit_to_quat(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let q = q.quaternion();
    [q.w, q.i, q.j, q.k]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 50,
            tol: 1e-5,
            scale_min: 0.25,
            scale_max: 4.0,
            seed: 0,
        }
    }
}

/// Uniformly random rotation (Shoemake).
fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::from_quaternion(Quaternion::new(
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    ))
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn rms(points: &[Vector3<f64>], c: &Vector3<f64>) -> f64 {
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64).sqrt()
}

/// Cluster covariance has rank below 3.
fn is_rank_deficient(points: &[Vector3<f64>], c: &Vector3<f64>) -> bool {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let max = eig.max();
    !(max > 0.0) || eig.min() <= 1e-10 * max
}

/// Proper rotation maximizing `tr(Rᵀ M)`.
fn procrustes(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let d = (u * v_t).determinant().signum();
    Some(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t)
}

/// Principal axes as columns, largest variance first, forming a proper
/// rotation. The first two axes point toward the heavier tail.
fn principal_frame(points: &[Vector3<f64>], c: &Vector3<f64>) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = order.map(|k| eig.eigenvectors.column(k).into_owned());
    for axis in axes.iter_mut().take(2) {
        let skew: f64 = points.iter().map(|p| axis.dot(&(p - c)).powi(3)).sum();
        if skew < 0.0 {
            *axis = -*axis;
        }
    }
    axes[2] = axes[0].cross(&axes[1]);
    Matrix3::from_columns(&axes)
}

struct Fit {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    scale: Vector3<f64>,
}

impl Fit {
    fn apply(&self, r: &Matrix3<f64>, x: &Vector3<f64>) -> Vector3<f64> {
        (r * (x - self.translation)).component_mul(&self.scale)
    }
}

/// Squared residual for fixed correspondences.
fn sq_residual(fit: &Fit, xs: &[Vector3<f64>], qs: &[Vector3<f64>]) -> f64 {
    let r = fit.rotation.to_rotation_matrix().into_inner();
    xs.iter().zip(qs).map(|(x, q)| (fit.apply(&r, x) - q).norm_squared()).sum()
}

/// One block-coordinate pass for fixed correspondences. Each block update is
/// an exact (or guarded) minimizer, so the squared residual never increases.
fn update_blocks(
    fit: &mut Fit,
    xs: &[Vector3<f64>],
    qs: &[Vector3<f64>],
    opts: &FitOptions,
    isotropic: bool,
    mut check: impl FnMut(&Fit),
) {
    let x_bar = centroid(xs);
    let q_bar = centroid(qs);
    let solve_t = |fit: &mut Fit| {
        let r = fit.rotation.to_rotation_matrix().into_inner();
        fit.translation = x_bar - r.transpose() * q_bar.component_div(&fit.scale);
    };

    solve_t(fit);
    check(fit);

    // rotation: minimize Σ‖S·R·p − c‖² by majorization. Each pass is a
    // Procrustes problem and reduces to plain Kabsch when S is isotropic.
    let ps: Vec<Vector3<f64>> = xs.iter().map(|x| x - x_bar).collect();
    let cs: Vec<Vector3<f64>> = qs.iter().map(|q| q - q_bar).collect();
    let s2 = fit.scale.component_mul(&fit.scale);
    let l = s2.max();
    for _ in 0..ROTATION_PASSES {
        let r_old = fit.rotation.to_rotation_matrix().into_inner();
        let mut m = Matrix3::zeros();
        for (p, c) in ps.iter().zip(&cs) {
            let rp = r_old * p;
            let target = fit.scale.component_mul(c) + (Vector3::repeat(l) - s2).component_mul(&rp);
            m += target * p.transpose();
        }
        let Some(r_new) = procrustes(&m) else { break };
        let candidate = UnitQuaternion::from_matrix(&r_new);
        let before = sq_residual(fit, xs, qs);
        let old = fit.rotation;
        fit.rotation = candidate;
        solve_t(fit);
        let after = sq_residual(fit, xs, qs);
        if after > before {
            fit.rotation = old;
            solve_t(fit);
            break;
        }
        if before - after <= 1e-12 * before {
            break;
        }
    }
    check(fit);

    // per-axis scale from centered, rotated cluster points
    let r = fit.rotation.to_rotation_matrix().into_inner();
    let (mut pq, mut pp) = (Vector3::zeros(), Vector3::zeros());
    for (x, q) in xs.iter().zip(qs) {
        let p = r * (x - x_bar);
        let c = q - q_bar;
        pq += p.component_mul(&c);
        pp += p.component_mul(&p);
    }
    let clamp = |s: f64| s.clamp(opts.scale_min, opts.scale_max);
    let axis_ok = pp.iter().all(|v| *v > 1e-12 * pp.max());
    if isotropic || !axis_ok {
        let s = if pp.sum() > 0.0 { clamp(pq.sum() / pp.sum()) } else { fit.scale[0] };
        fit.scale = Vector3::repeat(s);
    } else {
        fit.scale = Vector3::new(clamp(pq[0] / pp[0]), clamp(pq[1] / pp[1]), clamp(pq[2] / pp[2]));
    }
    solve_t(fit);
    check(fit);
}

fn correspondences(fit: &Fit, xs: &[Vector3<f64>], style: &KdTree) -> (Vec<Vector3<f64>>, f64, f64) {
    let r = fit.rotation.to_rotation_matrix().into_inner();
    let mut qs = Vec::with_capacity(xs.len());
    let (mut sq, mut lin) = (0.0, 0.0);
    for x in xs {
        let y = fit.apply(&r, x);
        let nn = style.nearest(&[y[0], y[1], y[2]]).expect("style index is nonempty");
        let p = style.points()[nn.index];
        qs.push(Vector3::from(p));
        sq += nn.dist2;
        lin += nn.dist2.sqrt();
    }
    (qs, sq, lin)
}

/// Fit `diag(S)·R·(x − t)` mapping `cluster` onto the indexed style points.
pub fn fit_similarity(cluster: &[[f64; 3]], style: &KdTree, opts: &FitOptions) -> Result<SimilarityTransform> {
    fit_similarity_traced(cluster, style, opts, |_| {})
}

/// As [`fit_similarity`], calling `trace` with the squared residual before and
/// after every block update (fixed correspondences).
pub fn fit_similarity_traced(
    cluster: &[[f64; 3]],
    style: &KdTree,
    opts: &FitOptions,
    mut trace: impl FnMut((f64, f64)),
) -> Result<SimilarityTransform> {
    if cluster.len() < MIN_CLUSTER_POINTS {
        return Err(Error::Contract(format!(
            "cluster has {} points, registration needs at least {MIN_CLUSTER_POINTS}",
            cluster.len()
        )));
    }
    if style.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(opts.scale_min > 0.0 && opts.scale_min <= opts.scale_max) {
        return Err(Error::Contract("invalid scale bounds".into()));
    }
    let xs: Vec<Vector3<f64>> = cluster.iter().map(|p| Vector3::from(*p)).collect();
    let ys: Vec<Vector3<f64>> = style.points().iter().map(|p| Vector3::from(*p)).collect();
    let x_bar = centroid(&xs);
    let y_bar = centroid(&ys);
    let degenerate = is_rank_deficient(&xs, &x_bar);
    let x_rms = rms(&xs, &x_bar);
    let y_rms = rms(&ys, &y_bar);
    let s0 = if x_rms > 0.0 && y_rms > 0.0 { y_rms / x_rms } else { 1.0 };
    let s0 = s0.clamp(opts.scale_min, opts.scale_max);
    let cluster_frame = principal_frame(&xs, &x_bar);
    let style_frame = principal_frame(&ys, &y_bar);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<SimilarityTransform> = None;
    for restart in 0..opts.restarts.max(1) {
        let rotation = match restart {
            0 => UnitQuaternion::identity(),
            k if k <= AXIS_FLIPS.len() => {
                let flip = Matrix3::from_diagonal(&Vector3::from(AXIS_FLIPS[k - 1]));
                UnitQuaternion::from_matrix(&(style_frame * flip * cluster_frame.transpose()))
            }
            _ => random_rotation(&mut rng),
        };
        let scale = Vector3::repeat(s0);
        let r = rotation.to_rotation_matrix().into_inner();
        let mut fit = Fit {
            rotation,
            translation: x_bar - r.transpose() * y_bar.component_div(&scale),
            scale,
        };

        let mut prev = f64::INFINITY;
        for _ in 0..opts.max_iter.max(1) {
            let (qs, obj, _) = correspondences(&fit, &xs, style);
            if prev.is_finite() && (prev - obj) <= opts.tol * prev.max(f64::MIN_POSITIVE) {
                break;
            }
            prev = obj;
            let mut last = sq_residual(&fit, &xs, &qs);
            for _ in 0..BLOCK_PASSES {
                let start = last;
                update_blocks(&mut fit, &xs, &qs, opts, degenerate, |f| {
                    let now = sq_residual(f, &xs, &qs);
                    trace((last, now));
                    last = now;
                });
                if start - last <= 1e-10 * start {
                    break;
                }
            }
        }
        let (_, _, objective) = correspondences(&fit, &xs, style);
        let candidate = SimilarityTransform {
            translation: fit.translation.into(),
            rotation: unit_to_quat(&fit.rotation),
            scale: fit.scale.into(),
            objective,
            degenerate,
        };
        if best.as_ref().is_none_or(|b| candidate.objective < b.objective) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub content_cluster: usize,
    pub transform: SimilarityTransform,
    /// Ascending, deduplicated indices into the style cloud.
    pub style_indices: Vec<usize>,
    pub k_used: usize,
}

fn knn_union(transform: &SimilarityTransform, cluster: &[[f64; 3]], style: &KdTree, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = cluster
        .iter()
        .flat_map(|&x| style.knn(&transform.apply(x), k).into_iter().map(|n| n.index))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Union of the `k` nearest style points of every mapped cluster point,
/// doubling `k` (at most four times) while fewer than 16 are found.
pub fn select_style_cluster(
    content_cluster: usize,
    transform: &SimilarityTransform,
    cluster: &[[f64; 3]],
    style: &KdTree,
    k: usize,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    let mut k_used = k;
    let mut indices = knn_union(transform, cluster, style, k_used);
    let mut doublings = 0;
    while indices.len() < MIN_SELECTION && doublings < MAX_DOUBLINGS && k_used < style.len() {
        k_used *= 2;
        doublings += 1;
        indices = knn_union(transform, cluster, style, k_used);
    }
    if indices.len() < MIN_SELECTION_HARD {
        return Err(Error::Selection {
            cluster: content_cluster,
            found: indices.len(),
            k_used,
        });
    }
    Ok(ClusterAssignment {
        content_cluster,
        transform: transform.clone(),
        style_indices: indices,
        k_used,
    })
}

/// Map style Gaussians back into the content frame: positions by the inverse
/// transform, orientations by `Rᵀ`, shapes shrunk isotropically by `λ`.
pub fn apply_inverse(transform: &SimilarityTransform, style_subcloud: &GaussianCloud) -> GaussianCloud {
    let r_inv = quat_to_unit(transform.rotation).inverse();
    let shift = transform.lambda().ln();
    let gaussians = style_subcloud
        .gaussians
        .iter()
        .map(|g| {
            let rot = r_inv * quat_to_unit(g.rotation);
            Gaussian {
                position: transform.apply_inverse_point(g.position),
                rotation: unit_to_quat(&rot),
                log_scale: g.log_scale.map(|l| l - shift),
                ..g.clone()
            }
        })
        .collect();
    GaussianCloud {
        gaussians,
        layout: style_subcloud.layout.clone(),
        source_path: style_subcloud.source_path.clone(),
    }
}
