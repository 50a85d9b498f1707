//! Gaussian-splat data model.
//!
//! Decoded fields are kept in `f64`. Gaussians loaded from a file also keep
//! the stored `f32` values of the nonlinearly encoded fields (color, opacity,
//! rotation), so untouched Gaussians are written back bit-exactly.

use std::sync::Arc;

mod features;
mod ply;
mod resample;

pub use features::{
    assemble_features, assemble_features_weighted, luminance, FeatureCloud, FeatureMode,
    Normalization, WeightScheme,
};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PropertyDef, ScalarKind, VertexLayout};
pub use resample::{surface_resample, surface_resample_indices, ResampleParams};

/// Zeroth-order spherical harmonic constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Clamp applied to the opacity logit on encode.
pub const OPACITY_LOGIT_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct StoredFields {
    pub f_dc: [f32; 3],
    pub opacity: f32,
    pub rotation: [f32; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    /// RGB in `[0, 1]`, decoded from the DC band.
    pub color: [f64; 3],
    /// Natural log of the per-axis scale.
    pub log_scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    /// Bytes of every non-core vertex property, in layout order.
    pub raw_extra: Vec<u8>,
    pub(crate) stored: Option<StoredFields>,
}

impl Gaussian {
    pub fn new(
        position: [f64; 3],
        color: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity: f64,
    ) -> Self {
        Self {
            position,
            color,
            log_scale,
            rotation: normalize_quat(rotation),
            opacity,
            raw_extra: Vec::new(),
            stored: None,
        }
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    /// True when the color no longer matches the value decoded from the file.
    pub fn color_modified(&self) -> bool {
        match &self.stored {
            Some(s) => decode_color(s.f_dc) != self.color,
            None => false,
        }
    }
}

pub fn decode_color(f_dc: [f32; 3]) -> [f64; 3] {
    f_dc.map(|v| (0.5 + SH_C0 * v as f64).clamp(0.0, 1.0))
}

pub fn encode_color(color: [f64; 3]) -> [f32; 3] {
    color.map(|c| ((c - 0.5) / SH_C0) as f32)
}

pub fn decode_opacity(raw: f32) -> f64 {
    1.0 / (1.0 + (-(raw as f64)).exp())
}

pub fn encode_opacity(opacity: f64) -> f32 {
    let logit = (opacity / (1.0 - opacity)).ln();
    let logit = if logit.is_nan() { 0.0 } else { logit };
    logit.clamp(-OPACITY_LOGIT_CLAMP, OPACITY_LOGIT_CLAMP) as f32
}

pub fn decode_rotation(raw: [f32; 4]) -> [f64; 4] {
    normalize_quat(raw.map(|v| v as f64))
}

pub(crate) fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        q.map(|v| v / n)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}

#[derive(Clone, Debug)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub layout: Arc<VertexLayout>,
    pub source_path: Option<String>,
}

impl GaussianCloud {
    /// A cloud using the standard 3DGS vertex layout.
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            layout: Arc::new(VertexLayout::standard()),
            source_path: None,
        }
    }

    pub fn with_layout(gaussians: Vec<Gaussian>, layout: Arc<VertexLayout>) -> Self {
        Self {
            gaussians,
            layout,
            source_path: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.position).collect()
    }

    /// The Gaussians at `indices`, in the given order, sharing this layout.
    pub fn subset(&self, indices: &[usize]) -> GaussianCloud {
        GaussianCloud {
            gaussians: indices.iter().map(|&i| self.gaussians[i].clone()).collect(),
            layout: Arc::clone(&self.layout),
            source_path: self.source_path.clone(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`; `None` when empty.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.gaussians.first()?.position;
        let mut lo = first;
        let mut hi = first;
        for g in &self.gaussians {
            for a in 0..3 {
                lo[a] = lo[a].min(g.position[a]);
                hi[a] = hi[a].max(g.position[a]);
            }
        }
        Some((lo, hi))
    }
}
