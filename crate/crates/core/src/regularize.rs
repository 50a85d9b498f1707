//! Scale-shape regularizers: the anisotropy and uniform-scale losses, and a
//! direct projection that enforces them without a training loop.

use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerParams {
    /// Largest allowed ratio between the biggest and smallest axis scale.
    pub r: f64,
    /// Target uniform scale, in scene units.
    pub s: f64,
}

impl RegularizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 1.0) || !self.r.is_finite() {
            return Err(Error::Contract(format!("anisotropy bound r must be >= 1, got {}", self.r)));
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::Contract(format!("target scale s must be positive, got {}", self.s)));
        }
        Ok(())
    }
}

fn max_min(s: [f64; 3]) -> (f64, f64) {
    (s[0].max(s[1]).max(s[2]), s[0].min(s[1]).min(s[2]))
}

/// Mean of `max(max(S) / min(S), r) − r`.
pub fn aniso_loss(cloud: &GaussianCloud, r: f64) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    cloud
        .gaussians
        .iter()
        .map(|g| {
            let (hi, lo) = max_min(g.scale());
            (hi / lo).max(r) - r
        })
        .sum::<f64>()
        / cloud.len() as f64
}

/// Mean of `‖S − (s, s, s)‖²`.
pub fn uniform_loss(cloud: &GaussianCloud, s: f64) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    cloud
        .gaussians
        .iter()
        .map(|g| g.scale().iter().map(|v| (v - s).powi(2)).sum::<f64>())
        .sum::<f64>()
        / cloud.len() as f64
}

/// Median over Gaussians of the geometric-mean scale.
pub fn median_scale(cloud: &GaussianCloud) -> Option<f64> {
    let mut v: Vec<f64> = cloud
        .gaussians
        .iter()
        .map(|g| (g.log_scale.iter().sum::<f64>() / 3.0).exp())
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Clamp log-scales into a window of width `ln r` placed so their mean (the
/// log of the geometric mean) is unchanged.
fn clamp_log_window(l: [f64; 3], r: f64) -> [f64; 3] {
    let width = r.ln();
    let (hi, lo) = (l[0].max(l[1]).max(l[2]), l[0].min(l[1]).min(l[2]));
    if hi - lo <= width || hi.exp() / lo.exp() <= r {
        return l;
    }
    let target: f64 = l.iter().sum();
    let total = |lo: f64| l.iter().map(|v| v.clamp(lo, lo + width)).sum::<f64>();
    // `total` is piecewise linear and nondecreasing in the window start;
    // locate the segment containing `target` among the breakpoints.
    let mut breaks: Vec<f64> = l.iter().flat_map(|v| [*v, v - width]).collect();
    breaks.sort_by(f64::total_cmp);
    let mut start = lo;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ta, tb) = (total(a), total(b));
        if ta <= target && target <= tb {
            start = if tb > ta { a + (target - ta) * (b - a) / (tb - ta) } else { a };
            break;
        }
    }
    l.map(|v| v.clamp(start, start + width))
}

/// Shrink every Gaussian whose scale anisotropy exceeds `r` to exactly `r`,
/// keeping its geometric-mean scale, then (optionally) pull scales halfway
/// toward `(s, s, s)` in log space.
pub fn project_scales(cloud: &GaussianCloud, params: &RegularizerParams, apply_uniform: bool) -> Result<GaussianCloud> {
    params.validate()?;
    let log_s = params.s.ln();
    let mut out = cloud.clone();
    for g in &mut out.gaussians {
        let mut l = clamp_log_window(g.log_scale, params.r);
        if apply_uniform {
            l = l.map(|v| 0.5 * v + 0.5 * log_s);
        }
        // exp() rounding can leave the ratio a hair above r
        loop {
            let (hi, lo) = max_min(l.map(f64::exp));
            if hi / lo <= params.r {
                break;
            }
            let imax = (0..3).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            l[imax] -= f64::EPSILON * l[imax].abs().max(1.0);
        }
        g.log_scale = l;
    }
    Ok(out)
}
