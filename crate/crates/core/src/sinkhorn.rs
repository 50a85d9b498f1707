//! Log-domain entropic optimal transport and the debiased Sinkhorn divergence.
//!
//! Cost is `C(x, y) = ½‖x − y‖²`. Potentials follow the symmetric averaged
//! update
//!
//! ```text
//! f_i ← ½ (f_i + softmin_ε,j [C_ij − g_j])
//! g_j ← ½ (g_j + softmin_ε,i [C_ij − f_i])
//! softmin_ε(v) = −ε log Σ w exp(−v / ε)
//! ```
//!
//! with both sides updated from the previous iterate, so swapping the two
//! measures swaps the potentials exactly. The transport value is the dual
//! objective `⟨a, f⟩ + ⟨b, g⟩`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::FeatureCloud;
use crate::{Error, Result};

/// Rows-times-columns above which softmin rows are evaluated in parallel.
/// Every row is reduced sequentially, so results do not depend on threading.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornParams {
    /// Entropy weight ε, in squared feature units.
    pub gamma: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute potential update.
    pub tol: f64,
    /// ε-scaling: start at the squared diameter and halve down to `gamma`.
    pub anneal: bool,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            max_iter: 1000,
            tol: 1e-6,
            anneal: true,
        }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Contract(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Contract(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Contract("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub sd_value: f64,
    pub cross: SinkhornResult,
    pub self_a: SinkhornResult,
    pub self_b: SinkhornResult,
}

impl DivergenceReport {
    fn assemble(cross: SinkhornResult, self_a: SinkhornResult, self_b: SinkhornResult) -> Self {
        Self {
            sd_value: cross.value - 0.5 * self_a.value - 0.5 * self_b.value,
            cross,
            self_a,
            self_b,
        }
    }

    pub fn converged(&self) -> bool {
        self.cross.converged && self.self_a.converged && self.self_b.converged
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceGradient {
    /// Row-major `n x dim`, with respect to the support points of `a`.
    pub gradient: Vec<f64>,
    pub report: DivergenceReport,
}

#[inline]
fn half_sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, v) in x.iter().zip(y) {
        let d = u - v;
        s += d * d;
    }
    0.5 * s
}

/// Bounding-box diagonal of the union of both supports.
pub fn diameter(a: &FeatureCloud, b: &FeatureCloud) -> f64 {
    let d = a.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for cloud in [a, b] {
        for row in cloud.points().chunks_exact(d) {
            for k in 0..d {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(l, h)| (h - l).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Largest possible cost between the two supports, `½ diameter²`.
pub fn cost_scale(a: &FeatureCloud, b: &FeatureCloud) -> f64 {
    0.5 * diameter(a, b).powi(2)
}

fn check_inputs(a: &FeatureCloud, b: &FeatureCloud, params: &SinkhornParams) -> Result<()> {
    params.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.points().iter().chain(b.points()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite support point gives non-finite cost".into()));
    }
    if !cost_scale(a, b).is_finite() {
        return Err(Error::Numeric("cost overflows".into()));
    }
    Ok(())
}

/// Streaming log-sum-exp of `u_j − C(x, y_j) / ε` over the rows of `ys`,
/// returned as `(max, Σ exp(t − max))`.
#[inline]
fn lse_row<const D: usize>(x: &[f64], ys: &[f64], u: &[f64], half_inv: f64) -> (f64, f64) {
    let x: [f64; D] = x.try_into().expect("row has dimension D");
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (y, &uj) in ys.chunks_exact(D).zip(u) {
        let mut c = 0.0;
        for k in 0..D {
            let t = x[k] - y[k];
            c += t * t;
        }
        let t = uj - c * half_inv;
        if t > max {
            sum = sum * (max - t).exp() + 1.0;
            max = t;
        } else if t > f64::NEG_INFINITY {
            sum += (t - max).exp();
        }
    }
    (max, sum)
}

fn lse_row_dyn(x: &[f64], ys: &[f64], u: &[f64], half_inv: f64) -> (f64, f64) {
    let d = x.len();
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (y, &uj) in ys.chunks_exact(d).zip(u) {
        let t = uj - 2.0 * half_sq_dist(x, y) * half_inv;
        if t > max {
            sum = sum * (max - t).exp() + 1.0;
            max = t;
        } else if t > f64::NEG_INFINITY {
            sum += (t - max).exp();
        }
    }
    (max, sum)
}

/// `out_i = −ε log Σ_j exp(log_w_j + (h_j − C(x_i, y_j)) / ε)`.
fn softmin(x: &FeatureCloud, y: &FeatureCloud, log_wy: &[f64], h: &[f64], eps: f64, out: &mut [f64]) {
    let d = x.dim();
    let inv = 1.0 / eps;
    let half_inv = 0.5 * inv;
    let u: Vec<f64> = log_wy.iter().zip(h).map(|(l, hj)| l + hj * inv).collect();
    let ys = y.points();
    let row = |xi: &[f64]| -> f64 {
        let (max, sum) = match d {
            3 => lse_row::<3>(xi, ys, &u, half_inv),
            4 => lse_row::<4>(xi, ys, &u, half_inv),
            6 => lse_row::<6>(xi, ys, &u, half_inv),
            _ => lse_row_dyn(xi, ys, &u, half_inv),
        };
        if max == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        -eps * (max + sum.ln())
    };
    if x.len() * y.len() >= PAR_THRESHOLD {
        out.par_iter_mut()
            .zip(x.points().par_chunks_exact(d))
            .for_each(|(o, xi)| *o = row(xi));
    } else {
        for (o, xi) in out.iter_mut().zip(x.points().chunks_exact(d)) {
            *o = row(xi);
        }
    }
}

fn log_weights(c: &FeatureCloud) -> Vec<f64> {
    c.weights().iter().map(|w| w.ln()).collect()
}

fn epsilon_schedule(a: &FeatureCloud, b: &FeatureCloud, params: &SinkhornParams) -> Vec<f64> {
    let mut out = Vec::new();
    if params.anneal {
        let mut e = diameter(a, b).powi(2).max(params.gamma);
        while e > params.gamma {
            out.push(e);
            e = (0.5 * e).max(params.gamma);
        }
    }
    out.push(params.gamma);
    out
}

/// Iterations spent at every annealing stage before the final ε.
const STAGE_ITERS: usize = 2;

/// Potential update rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Update {
    /// Simultaneous half-steps on both potentials; swapping the measures
    /// swaps the potentials exactly.
    Averaged,
    /// Alternating updates over-relaxed by `ω` at the final ε (plain
    /// alternating while annealing). Same fixed point, far fewer iterations.
    Relaxed(f64),
}

/// Core solver. `warm` skips annealing and starts from the given potentials.
/// `symmetric` asserts `a` and `b` are the same measure and updates one potential.
pub(crate) fn solve(
    a: &FeatureCloud,
    b: &FeatureCloud,
    params: &SinkhornParams,
    warm: Option<(&[f64], &[f64])>,
    symmetric: bool,
) -> Result<SinkhornResult> {
    solve_with(a, b, params, warm, symmetric, Update::Averaged)
}

pub(crate) fn solve_with(
    a: &FeatureCloud,
    b: &FeatureCloud,
    params: &SinkhornParams,
    warm: Option<(&[f64], &[f64])>,
    symmetric: bool,
    update: Update,
) -> Result<SinkhornResult> {
    check_inputs(a, b, params)?;
    let (n, m) = (a.len(), b.len());
    let log_wa = log_weights(a);
    let log_wb = log_weights(b);
    let mut f_new = vec![0.0; n];
    let mut g_new = vec![0.0; m];

    let step = |f: &[f64], g: &[f64], eps: f64, f_out: &mut [f64], g_out: &mut [f64]| {
        softmin(a, b, &log_wb, g, eps, f_out);
        if symmetric {
            g_out.copy_from_slice(f_out);
        } else {
            softmin(b, a, &log_wa, f, eps, g_out);
        }
    };

    let (mut f, mut g, schedule, mut iterations) = match warm {
        Some((f0, g0)) if f0.len() == n && g0.len() == m => {
            (f0.to_vec(), g0.to_vec(), vec![params.gamma], 0)
        }
        _ => {
            let schedule = epsilon_schedule(a, b, params);
            // first pass is a full (undamped) step from zero potentials
            let (mut f, mut g) = (vec![0.0; n], vec![0.0; m]);
            step(&vec![0.0; n], &vec![0.0; m], schedule[0], &mut f, &mut g);
            (f, g, schedule, 1)
        }
    };

    let last = schedule.len() - 1;
    let mut converged = false;
    'stages: for (s, &eps) in schedule.iter().enumerate() {
        let budget = if s == last { usize::MAX } else { STAGE_ITERS };
        let mut spent = 0;
        while spent < budget {
            if iterations >= params.max_iter {
                break 'stages;
            }
            let mut delta: f64 = 0.0;
            let mut relax = |x: &mut [f64], x_new: &[f64], w: f64| {
                for (xi, xu) in x.iter_mut().zip(x_new) {
                    let next = (1.0 - w) * *xi + w * xu;
                    delta = delta.max((next - *xi).abs());
                    *xi = next;
                }
            };
            match update {
                Update::Relaxed(omega) if !symmetric => {
                    let w = if s == last { omega } else { 1.0 };
                    softmin(a, b, &log_wb, &g, eps, &mut f_new);
                    relax(&mut f, &f_new, w);
                    softmin(b, a, &log_wa, &f, eps, &mut g_new);
                    relax(&mut g, &g_new, w);
                }
                _ => {
                    step(&f, &g, eps, &mut f_new, &mut g_new);
                    relax(&mut f, &f_new, 0.5);
                    relax(&mut g, &g_new, 0.5);
                }
            }
            iterations += 1;
            spent += 1;
            if !delta.is_finite() {
                return Err(Error::Numeric("Sinkhorn potentials became non-finite".into()));
            }
            if s == last && delta < params.tol {
                converged = true;
                break 'stages;
            }
        }
    }

    let value = a.weights().iter().zip(&f).map(|(w, v)| w * v).sum::<f64>()
        + b.weights().iter().zip(&g).map(|(w, v)| w * v).sum::<f64>();
    if !value.is_finite() {
        return Err(Error::Numeric("entropic OT value is non-finite".into()));
    }
    Ok(SinkhornResult {
        f,
        g,
        value,
        iterations,
        converged,
    })
}

/// Entropic OT between two weighted point sets.
pub fn entropic_ot(a: &FeatureCloud, b: &FeatureCloud, params: &SinkhornParams) -> Result<SinkhornResult> {
    solve(a, b, params, None, false)
}

/// `OT_ε(a, b) − ½ OT_ε(a, a) − ½ OT_ε(b, b)`.
pub fn sinkhorn_divergence(
    a: &FeatureCloud,
    b: &FeatureCloud,
    params: &SinkhornParams,
) -> Result<DivergenceReport> {
    let cross = solve(a, b, params, None, false)?;
    let self_a = solve(a, a, params, None, true)?;
    let self_b = solve(b, b, params, None, true)?;
    Ok(DivergenceReport::assemble(cross, self_a, self_b))
}

/// Dense transport plan `π_ij = a_i b_j exp((f_i + g_j − C_ij) / ε)`, row-major.
pub fn transport_plan(a: &FeatureCloud, b: &FeatureCloud, potentials: &SinkhornResult, gamma: f64) -> Vec<f64> {
    let d = a.dim();
    let mut plan = Vec::with_capacity(a.len() * b.len());
    for (i, xi) in a.points().chunks_exact(d).enumerate() {
        for (j, yj) in b.points().chunks_exact(d).enumerate() {
            let e = (potentials.f[i] + potentials.g[j] - half_sq_dist(xi, yj)) / gamma;
            plan.push(a.weights()[i] * b.weights()[j] * e.exp());
        }
    }
    plan
}

/// `Σ_j exp(f_i + v_j − C(x, y_j) / ε) (x − y_j)` written into `acc`.
#[inline]
fn displacement_row<const D: usize>(x: &[f64], ys: &[f64], v: &[f64], fi: f64, half_inv: f64, acc: &mut [f64]) {
    let x: [f64; D] = x.try_into().expect("row has dimension D");
    let mut sum = [0.0; D];
    for (y, &vj) in ys.chunks_exact(D).zip(v) {
        let mut diff = [0.0; D];
        let mut c = 0.0;
        for k in 0..D {
            diff[k] = x[k] - y[k];
            c += diff[k] * diff[k];
        }
        let p = (fi + vj - c * half_inv).exp();
        for k in 0..D {
            sum[k] += p * diff[k];
        }
    }
    acc.copy_from_slice(&sum);
}

fn displacement_row_dyn(x: &[f64], ys: &[f64], v: &[f64], fi: f64, half_inv: f64, acc: &mut [f64]) {
    let d = x.len();
    acc.fill(0.0);
    for (y, &vj) in ys.chunks_exact(d).zip(v) {
        let p = (fi + vj - 2.0 * half_sq_dist(x, y) * half_inv).exp();
        for k in 0..d {
            acc[k] += p * (x[k] - y[k]);
        }
    }
}

/// Adds `sign · Σ_j π_ij (x_i − y_j)` to `out`, with π built from `f`, `g`.
fn accumulate_displacement(
    x: &FeatureCloud,
    y: &FeatureCloud,
    f: &[f64],
    g: &[f64],
    eps: f64,
    sign: f64,
    out: &mut [f64],
) {
    let d = x.dim();
    let inv = 1.0 / eps;
    let half_inv = 0.5 * inv;
    // v_j = log w_j + g_j / ε
    let v: Vec<f64> = log_weights(y).iter().zip(g).map(|(l, gj)| l + gj * inv).collect();
    let ys = y.points();
    let row = |i: usize, xi: &[f64], o: &mut [f64]| {
        let wi = x.weights()[i];
        if wi == 0.0 {
            return;
        }
        let fi = f[i] * inv;
        let mut acc = vec![0.0; d];
        match d {
            3 => displacement_row::<3>(xi, ys, &v, fi, half_inv, &mut acc),
            4 => displacement_row::<4>(xi, ys, &v, fi, half_inv, &mut acc),
            6 => displacement_row::<6>(xi, ys, &v, fi, half_inv, &mut acc),
            _ => displacement_row_dyn(xi, ys, &v, fi, half_inv, &mut acc),
        }
        let scale = sign * wi;
        for k in 0..d {
            o[k] += scale * acc[k];
        }
    };
    if x.len() * y.len() >= PAR_THRESHOLD {
        out.par_chunks_exact_mut(d)
            .zip(x.points().par_chunks_exact(d))
            .enumerate()
            .for_each(|(i, (o, xi))| row(i, xi, o));
    } else {
        for (i, (o, xi)) in out.chunks_exact_mut(d).zip(x.points().chunks_exact(d)).enumerate() {
            row(i, xi, o);
        }
    }
}

/// Envelope-theorem gradient of the divergence with respect to `a`'s points,
/// from already converged potentials.
pub fn gradient_from_report(
    a: &FeatureCloud,
    b: &FeatureCloud,
    report: &DivergenceReport,
    gamma: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; a.len() * a.dim()];
    accumulate_displacement(a, b, &report.cross.f, &report.cross.g, gamma, 1.0, &mut grad);
    accumulate_displacement(a, a, &report.self_a.f, &report.self_a.g, gamma, -1.0, &mut grad);
    grad
}

/// Divergence and its gradient with respect to the support points of `a`.
/// Non-converged solves still return a gradient; check `report.converged()`.
pub fn sd_gradient(a: &FeatureCloud, b: &FeatureCloud, params: &SinkhornParams) -> Result<DivergenceGradient> {
    let report = sinkhorn_divergence(a, b, params)?;
    let gradient = gradient_from_report(a, b, &report, params.gamma);
    Ok(DivergenceGradient { gradient, report })
}

/// Warm-started divergence evaluation for a moving `a` against a fixed `b`.
///
/// The self term of `b` is solved once; cross and `a` self potentials are
/// carried from one call to the next. In tracking mode each warm call runs
/// at most a fixed number of over-relaxed iterations, so potentials follow
/// the moving measure instead of being re-converged at every step.
#[derive(Clone, Debug)]
pub struct FlowSolver {
    params: SinkhornParams,
    target: FeatureCloud,
    self_target: SinkhornResult,
    cross: Option<(Vec<f64>, Vec<f64>)>,
    self_moving: Option<Vec<f64>>,
    update: Update,
    step_iters: Option<usize>,
}

impl FlowSolver {
    pub fn new(target: FeatureCloud, params: SinkhornParams) -> Result<Self> {
        let self_target = solve(&target, &target, &params, None, true)?;
        Ok(Self {
            params,
            target,
            self_target,
            cross: None,
            self_moving: None,
            update: Update::Averaged,
            step_iters: None,
        })
    }

    /// Cap warm calls at `step_iters` iterations, over-relaxing the cross
    /// problem by `omega` (in `[1, 2)`).
    pub fn tracking(mut self, omega: f64, step_iters: usize) -> Result<Self> {
        if !(1.0..2.0).contains(&omega) {
            return Err(Error::Contract(format!("relaxation must lie in [1, 2), got {omega}")));
        }
        if step_iters == 0 {
            return Err(Error::Contract("step iterations must be at least 1".into()));
        }
        self.update = Update::Relaxed(omega);
        self.step_iters = Some(step_iters);
        Ok(self)
    }

    pub fn target(&self) -> &FeatureCloud {
        &self.target
    }

    /// Divergence and gradient; warm calls respect the tracking budget.
    pub fn evaluate(&mut self, moving: &FeatureCloud) -> Result<DivergenceGradient> {
        self.run(moving, self.step_iters)
    }

    /// Divergence and gradient with potentials converged to `tol`.
    pub fn evaluate_converged(&mut self, moving: &FeatureCloud) -> Result<DivergenceGradient> {
        self.run(moving, None)
    }

    fn run(&mut self, moving: &FeatureCloud, budget: Option<usize>) -> Result<DivergenceGradient> {
        let warm = SinkhornParams {
            max_iter: budget.unwrap_or(self.params.max_iter),
            ..self.params
        };
        let cross = match &self.cross {
            Some((f, g)) => solve_with(moving, &self.target, &warm, Some((f, g)), false, self.update)?,
            None => solve_with(moving, &self.target, &self.params, None, false, self.update)?,
        };
        let self_a = match &self.self_moving {
            Some(f) => solve(moving, moving, &warm, Some((f, f)), true)?,
            None => solve(moving, moving, &self.params, None, true)?,
        };
        self.cross = Some((cross.f.clone(), cross.g.clone()));
        self.self_moving = Some(self_a.f.clone());
        let report = DivergenceReport::assemble(cross, self_a, self.self_target.clone());
        let gradient = gradient_from_report(moving, &self.target, &report, self.params.gamma);
        Ok(DivergenceGradient { gradient, report })
    }
}
