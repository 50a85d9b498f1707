use serde::{Deserialize, Serialize};

use crate::cloud::{luminance, FeatureCloud, FeatureMode, GaussianCloud, Normalization, WeightScheme};
use crate::sinkhorn::{sd_gradient, FlowSolver};
use crate::spatial::{mean_knn_distance, neighbor_graph};
use crate::{Error, Result};

use super::StylizationConfig;

/// Neighbors per Gaussian in the surface-energy graph.
const ENERGY_NEIGHBORS: usize = 8;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const LUMINANCE_FLOOR: f64 = 1e-4;

/// Optimizable color channel, stored unweighted (values in `[0, 1]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AuxChannel {
    None,
    Luminance(Vec<f64>),
    Rgb(Vec<[f64; 3]>),
}

impl AuxChannel {
    fn from_cloud(cloud: &GaussianCloud, mode: FeatureMode) -> Self {
        match mode {
            FeatureMode::Coords => AuxChannel::None,
            FeatureMode::CoordsLuminance { .. } => {
                AuxChannel::Luminance(cloud.gaussians.iter().map(|g| luminance(g.color)).collect())
            }
            FeatureMode::CoordsRgb { .. } => AuxChannel::Rgb(cloud.gaussians.iter().map(|g| g.color).collect()),
        }
    }

    fn width(&self) -> usize {
        match self {
            AuxChannel::None => 0,
            AuxChannel::Luminance(_) => 1,
            AuxChannel::Rgb(_) => 3,
        }
    }

    fn flatten(&self) -> Vec<f64> {
        match self {
            AuxChannel::None => Vec::new(),
            AuxChannel::Luminance(v) => v.clone(),
            AuxChannel::Rgb(v) => v.concat(),
        }
    }

    fn from_flat(&self, flat: &[f64]) -> Self {
        match self {
            AuxChannel::None => AuxChannel::None,
            AuxChannel::Luminance(_) => AuxChannel::Luminance(flat.to_vec()),
            AuxChannel::Rgb(_) => AuxChannel::Rgb(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
        }
    }
}

/// One style fragment being flowed toward its content cluster.
#[derive(Clone, Debug)]
pub struct ClusterFlowState {
    pub positions: Vec<[f64; 3]>,
    pub aux: AuxChannel,
    /// The fragment as it entered the flow; shapes, opacity and rotation
    /// are taken from here on write-back.
    pub frozen: GaussianCloud,
    /// 8 nearest neighbors of each Gaussian at initialization.
    pub neighbor_graph: Vec<Vec<usize>>,
    pub initial_positions: Vec<[f64; 3]>,
    /// Divergence at every iterate, starting with the initial one. Entries
    /// after the first come from the tracked (budgeted) potentials.
    pub sd_history: Vec<f64>,
    pub best_step: usize,
    /// Divergence of the returned iterate from converged potentials.
    pub sd_final: f64,
    /// Set when the flow was aborted; the state is then the initial one.
    pub flag: Option<String>,
}

impl ClusterFlowState {
    pub fn new(fragment: GaussianCloud, mode: FeatureMode) -> Self {
        let positions = fragment.positions();
        Self {
            aux: AuxChannel::from_cloud(&fragment, mode),
            neighbor_graph: neighbor_graph(&positions, ENERGY_NEIGHBORS),
            initial_positions: positions.clone(),
            positions,
            frozen: fragment,
            sd_history: Vec::new(),
            best_step: 0,
            sd_final: f64::NAN,
            flag: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Matching features in the frame `norm`.
    pub fn features(&self, mode: FeatureMode, norm: &Normalization, scheme: WeightScheme) -> Result<FeatureCloud> {
        let z: Vec<[f64; 3]> = self.positions.iter().map(|p| norm.forward(*p)).collect();
        build_features(&z, &self.aux.flatten(), mode, *norm, weights(&self.frozen, scheme)?)
    }

    fn reset(&mut self, reason: String) {
        self.positions = self.initial_positions.clone();
        self.aux = AuxChannel::from_cloud(&self.frozen, mode_of(&self.aux));
        self.flag = Some(reason);
    }
}

fn mode_of(aux: &AuxChannel) -> FeatureMode {
    // only the variant matters for rebuilding the channel
    match aux {
        AuxChannel::None => FeatureMode::Coords,
        AuxChannel::Luminance(_) => FeatureMode::CoordsLuminance { weight: 1.0 },
        AuxChannel::Rgb(_) => FeatureMode::CoordsRgb { weight: 1.0 },
    }
}

fn weights(cloud: &GaussianCloud, scheme: WeightScheme) -> Result<Vec<f64>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyScene);
    }
    Ok(match scheme {
        WeightScheme::Uniform => vec![1.0 / n as f64; n],
        WeightScheme::Opacity => {
            let total: f64 = cloud.gaussians.iter().map(|g| g.opacity).sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate("fragment has zero total opacity".into()));
            }
            cloud.gaussians.iter().map(|g| g.opacity / total).collect()
        }
    })
}

fn build_features(
    z: &[[f64; 3]],
    aux: &[f64],
    mode: FeatureMode,
    norm: Normalization,
    weights: Vec<f64>,
) -> Result<FeatureCloud> {
    let d = mode.dim();
    let w = mode.weight();
    let a = d - 3;
    let mut points = Vec::with_capacity(z.len() * d);
    for (i, p) in z.iter().enumerate() {
        points.extend_from_slice(p);
        points.extend(aux[i * a..(i + 1) * a].iter().map(|v| w * v));
    }
    FeatureCloud::new(points, d, weights, norm)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn energy_of(current: &[[f64; 3]], initial: &[[f64; 3]], graph: &[Vec<usize>]) -> f64 {
    let mut e = 0.0;
    for (g, nbrs) in graph.iter().enumerate() {
        for &h in nbrs {
            e += (dist(initial[g], initial[h]) - dist(current[g], current[h])).abs();
        }
    }
    e
}

fn energy_grad_of(current: &[[f64; 3]], initial: &[[f64; 3]], graph: &[Vec<usize>]) -> Vec<[f64; 3]> {
    let mut grad = vec![[0.0; 3]; current.len()];
    for (g, nbrs) in graph.iter().enumerate() {
        for &h in nbrs {
            let d0 = dist(initial[g], initial[h]);
            let d = dist(current[g], current[h]);
            let diff = d - d0;
            if diff == 0.0 || d == 0.0 {
                continue;
            }
            let s = diff.signum() / d;
            for a in 0..3 {
                let v = s * (current[g][a] - current[h][a]);
                grad[g][a] += v;
                grad[h][a] -= v;
            }
        }
    }
    grad
}

/// `Σ_g Σ_{h ∈ N(g)} | ‖g₀ − h₀‖ − ‖g − h‖ |` in scene units.
pub fn surface_energy(state: &ClusterFlowState) -> f64 {
    energy_of(&state.positions, &state.initial_positions, &state.neighbor_graph)
}

/// Gradient of [`surface_energy`] with respect to the positions, with
/// subgradient 0 where a distance matches its initial value.
pub fn surface_energy_gradient(state: &ClusterFlowState) -> Vec<[f64; 3]> {
    energy_grad_of(&state.positions, &state.initial_positions, &state.neighbor_graph)
}

/// The flowed objective at the state's current iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval {
    pub sd: f64,
    /// Surface energy in normalized units (scene energy / radius).
    pub energy: f64,
    /// `sd + surface_energy_weight · energy`.
    pub value: f64,
    /// With respect to scene-unit positions.
    pub grad_positions: Vec<[f64; 3]>,
    /// With respect to the unweighted aux channel, flattened.
    pub grad_aux: Vec<f64>,
}

/// Evaluate the objective and its gradient from cold Sinkhorn solves.
pub fn combined_objective(
    state: &ClusterFlowState,
    target: &FeatureCloud,
    cfg: &StylizationConfig,
) -> Result<ObjectiveEval> {
    check_target(state, target, cfg.feature_mode)?;
    let norm = *target.normalization();
    let feats = state.features(cfg.feature_mode, &norm, cfg.weight_scheme())?;
    let dg = sd_gradient(&feats, target, &cfg.sinkhorn_params())?;
    let z: Vec<[f64; 3]> = state.positions.iter().map(|p| norm.forward(*p)).collect();
    let z0: Vec<[f64; 3]> = state.initial_positions.iter().map(|p| norm.forward(*p)).collect();
    let (gz, gu) = split_gradient(&dg.gradient, cfg.feature_mode);
    let energy = energy_of(&z, &z0, &state.neighbor_graph);
    let ge = energy_grad_of(&z, &z0, &state.neighbor_graph);
    let we = cfg.surface_energy_weight;
    let grad_positions = gz
        .iter()
        .zip(&ge)
        .map(|(s, e)| std::array::from_fn(|a| (s[a] + we * e[a]) / norm.radius))
        .collect();
    Ok(ObjectiveEval {
        sd: dg.report.sd_value,
        energy,
        value: dg.report.sd_value + we * energy,
        grad_positions,
        grad_aux: gu,
    })
}

fn check_target(state: &ClusterFlowState, target: &FeatureCloud, mode: FeatureMode) -> Result<()> {
    if state.is_empty() {
        return Err(Error::EmptyScene);
    }
    if target.dim() != mode.dim() {
        return Err(Error::Contract(format!(
            "target has dimension {}, feature mode needs {}",
            target.dim(),
            mode.dim()
        )));
    }
    if state.aux.width() != mode.dim() - 3 {
        return Err(Error::Contract("aux channel does not match the feature mode".into()));
    }
    Ok(())
}

/// Split a feature-space gradient into coordinate rows and the aux part
/// with respect to the unweighted channel.
fn split_gradient(grad: &[f64], mode: FeatureMode) -> (Vec<[f64; 3]>, Vec<f64>) {
    let d = mode.dim();
    let w = mode.weight();
    let mut gz = Vec::with_capacity(grad.len() / d);
    let mut gu = Vec::with_capacity(grad.len() / d * (d - 3));
    for row in grad.chunks_exact(d) {
        gz.push([row[0], row[1], row[2]]);
        gu.extend(row[3..].iter().map(|v| w * v));
    }
    (gz, gu)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Cosine decay from `lr` to `0.1 lr` over `steps` updates.
fn learning_rate(lr: f64, step: usize, steps: usize) -> f64 {
    let lo = 0.1 * lr;
    let t = if steps > 1 { step as f64 / (steps - 1) as f64 } else { 0.0 };
    lo + 0.5 * (lr - lo) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Run `cfg.steps` Adam updates on positions and the aux channel against
/// `target`, keeping the iterate with the lowest objective (the divergence
/// itself when the surface-energy weight is 0).
pub fn flow_cluster(
    mut state: ClusterFlowState,
    target: &FeatureCloud,
    cfg: &StylizationConfig,
) -> Result<ClusterFlowState> {
    let mode = cfg.feature_mode;
    check_target(&state, target, mode)?;
    let norm = *target.normalization();
    let w = weights(&state.frozen, cfg.weight_scheme())?;
    let p = state.len();
    let width = state.aux.width();
    let we = cfg.surface_energy_weight;

    let z0: Vec<[f64; 3]> = state.initial_positions.iter().map(|x| norm.forward(*x)).collect();
    let mut z: Vec<f64> = state.positions.iter().flat_map(|x| norm.forward(*x)).collect();
    let mut u = state.aux.flatten();
    let mut solver = FlowSolver::new(target.clone(), cfg.sinkhorn_params())?
        .tracking(cfg.sinkhorn_relaxation, cfg.flow_sinkhorn_iters)?;
    let mut adam_z = Adam::new(3 * p);
    let mut adam_u = Adam::new(u.len());

    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    for step in 0..=cfg.steps {
        let rows: Vec<[f64; 3]> = z.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let feats = build_features(&rows, &u, mode, norm, w.clone())?;
        let dg = solver.evaluate(&feats)?;
        let sd = dg.report.sd_value;
        let energy = if we > 0.0 { energy_of(&rows, &z0, &state.neighbor_graph) } else { 0.0 };
        let objective = sd + we * energy;
        if !objective.is_finite() {
            state.reset(format!("non-finite divergence at step {step}"));
            return Ok(state);
        }
        history.push(sd);
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, z.clone(), u.clone(), step));
        }
        if step == cfg.steps {
            break;
        }

        let (gz, gu) = split_gradient(&dg.gradient, mode);
        let mut grad_z: Vec<f64> = gz.concat();
        if we > 0.0 {
            for (g, e) in grad_z.iter_mut().zip(energy_grad_of(&rows, &z0, &state.neighbor_graph).concat()) {
                *g += we * e;
            }
        }
        if grad_z.iter().chain(&gu).any(|g| !g.is_finite()) {
            state.reset(format!("non-finite gradient at step {step}"));
            return Ok(state);
        }
        let lr = learning_rate(cfg.lr, step, cfg.steps);
        adam_z.step(&mut z, &grad_z, lr);
        if width > 0 {
            adam_u.step(&mut u, &gu, lr);
            for v in &mut u {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    let (_, mut bz, mut bu, mut best_step) = best.expect("at least one iterate");
    let mut sd_final = history[0];
    if best_step > 0 {
        let rows: Vec<[f64; 3]> = bz.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let feats = build_features(&rows, &bu, mode, norm, w.clone())?;
        let sd = solver.evaluate_converged(&feats)?.report.sd_value;
        let energy = if we > 0.0 { energy_of(&rows, &z0, &state.neighbor_graph) } else { 0.0 };
        if sd + we * energy <= history[0] {
            sd_final = sd;
        } else {
            // tracked values can be optimistic; never return a worse iterate
            bz = state.initial_positions.iter().flat_map(|x| norm.forward(*x)).collect();
            bu = state.aux.flatten();
            best_step = 0;
        }
    }
    state.positions = bz.chunks_exact(3).map(|c| norm.inverse([c[0], c[1], c[2]])).collect();
    state.aux = state.aux.from_flat(&bu);
    state.sd_history = history;
    state.best_step = best_step;
    state.sd_final = sd_final;
    Ok(state)
}

/// Fragment with flowed positions and colors updated from the aux channel.
pub fn writeback_aux(state: &ClusterFlowState, mode: FeatureMode) -> GaussianCloud {
    let mut out = state.frozen.clone();
    for (i, g) in out.gaussians.iter_mut().enumerate() {
        g.position = state.positions[i];
        if mode.weight() == 0.0 {
            continue;
        }
        match (&state.aux, mode) {
            (AuxChannel::Luminance(l), FeatureMode::CoordsLuminance { .. }) => {
                let old = luminance(g.color);
                let peak = g.color[0].max(g.color[1]).max(g.color[2]);
                let cap = if peak > 0.0 { 1.0 / peak } else { f64::INFINITY };
                let factor = (l[i] / old.max(LUMINANCE_FLOOR)).clamp(0.0, cap);
                if factor != 1.0 {
                    g.color = g.color.map(|c| (c * factor).min(1.0));
                }
            }
            (AuxChannel::Rgb(c), FeatureMode::CoordsRgb { .. }) => {
                g.color = c[i].map(|v| v.clamp(0.0, 1.0));
            }
            _ => {}
        }
    }
    out
}

/// Rescale each Gaussian isotropically by the change in its mean distance
/// to the `k` nearest fragment neighbors, clamped to `clamp`.
pub fn adjust_scales(state: &ClusterFlowState, mut fragment: GaussianCloud, k: usize, clamp: [f64; 2]) -> GaussianCloud {
    if state.len() < 2 || k == 0 {
        return fragment;
    }
    let before = mean_knn_distance(&state.initial_positions, k);
    let after = mean_knn_distance(&state.positions, k);
    for (g, (b, a)) in fragment.gaussians.iter_mut().zip(before.iter().zip(&after)) {
        let factor = if *b > 0.0 { (a / b).clamp(clamp[0], clamp[1]) } else { 1.0 };
        if factor != 1.0 {
            let shift = factor.ln();
            g.log_scale = g.log_scale.map(|l| l + shift);
        }
    }
    fragment
}
