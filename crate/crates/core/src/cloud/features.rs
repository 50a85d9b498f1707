use serde::{Deserialize, Serialize};

use super::GaussianCloud;
use crate::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Rec.601 luminance of an RGB triple in `[0, 1]`.
pub fn luminance(color: [f64; 3]) -> f64 {
    LUMA[0] * color[0] + LUMA[1] * color[1] + LUMA[2] * color[2]
}

/// Which Gaussian attributes enter the matching feature space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureMode {
    Coords,
    CoordsLuminance { weight: f64 },
    CoordsRgb { weight: f64 },
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::CoordsLuminance { weight: 0.3 }
    }
}

impl FeatureMode {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMode::Coords => 3,
            FeatureMode::CoordsLuminance { .. } => 4,
            FeatureMode::CoordsRgb { .. } => 6,
        }
    }

    pub fn weight(&self) -> f64 {
        match *self {
            FeatureMode::Coords => 0.0,
            FeatureMode::CoordsLuminance { weight } | FeatureMode::CoordsRgb { weight } => weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weight();
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Contract(format!(
                "feature weight must be finite and nonnegative, got {w}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    #[default]
    Uniform,
    Opacity,
}

/// Centering and scaling applied to coordinates before matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        center: [0.0; 3],
        radius: 1.0,
    };

    /// Centroid and RMS distance to it.
    pub fn fit(positions: &[[f64; 3]]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyScene);
        }
        let n = positions.len() as f64;
        let mut center = [0.0; 3];
        for p in positions {
            for a in 0..3 {
                center[a] += p[a];
            }
        }
        center = center.map(|c| c / n);
        let ms = positions
            .iter()
            .map(|p| (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let radius = ms.sqrt();
        if !(radius >= 1e-12) {
            return Err(Error::Degenerate(format!(
                "RMS radius {radius:e} is below 1e-12"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn forward(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.center[a]) / self.radius)
    }

    pub fn inverse(&self, z: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + self.radius * z[a])
    }
}

/// Weighted point set in matching-feature space, row-major `n x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCloud {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
    normalization: Normalization,
}

impl FeatureCloud {
    pub fn new(
        points: Vec<f64>,
        dim: usize,
        weights: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::Contract(format!(
                "{} values do not form rows of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::EmptyScene);
        }
        if weights.len() != n {
            return Err(Error::Contract(format!("{} weights for {n} points", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Contract("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            points,
            dim,
            weights,
            normalization,
        })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Vec<f64>, dim: usize, normalization: Normalization) -> Result<Self> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        Self::new(points, dim, vec![1.0 / n.max(1) as f64; n], normalization)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Contract("ragged feature rows".into()));
        }
        Self::uniform(rows.concat(), dim, Normalization::IDENTITY)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [f64] {
        &mut self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }
}

/// Build features with uniform weights. Coordinates are normalized by the
/// frame of `normalize_to` when given, otherwise by this cloud's own centroid
/// and RMS radius.
pub fn assemble_features(
    cloud: &GaussianCloud,
    mode: FeatureMode,
    normalize_to: Option<&FeatureCloud>,
) -> Result<FeatureCloud> {
    assemble_features_weighted(cloud, mode, normalize_to, WeightScheme::Uniform)
}

pub fn assemble_features_weighted(
    cloud: &GaussianCloud,
    mode: FeatureMode,
    normalize_to: Option<&FeatureCloud>,
    scheme: WeightScheme,
) -> Result<FeatureCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    mode.validate()?;
    let norm = match normalize_to {
        Some(f) => *f.normalization(),
        None => Normalization::fit(&cloud.positions())?,
    };
    let dim = mode.dim();
    let mut points = Vec::with_capacity(cloud.len() * dim);
    for g in &cloud.gaussians {
        points.extend_from_slice(&norm.forward(g.position));
        match mode {
            FeatureMode::Coords => {}
            FeatureMode::CoordsLuminance { weight } => points.push(weight * luminance(g.color)),
            FeatureMode::CoordsRgb { weight } => points.extend(g.color.map(|c| weight * c)),
        }
    }
    let weights = match scheme {
        WeightScheme::Uniform => vec![1.0 / cloud.len() as f64; cloud.len()],
        WeightScheme::Opacity => {
            let total: f64 = cloud.gaussians.iter().map(|g| g.opacity).sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate("all opacities are zero".into()));
            }
            cloud.gaussians.iter().map(|g| g.opacity / total).collect()
        }
    };
    FeatureCloud::new(points, dim, weights, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Gaussian;
    use proptest::prelude::*;

    fn gray(p: [f64; 3]) -> Gaussian {
        Gaussian::new(p, [0.5; 3], [0.0; 3], [1.0, 0.0, 0.0, 0.0], 1.0)
    }

    #[test]
    fn luminance_values() {
        assert!((luminance([1.0, 1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(luminance([0.0; 3]), 0.0);
        assert_eq!(luminance([1.0, 0.0, 0.0]), 0.299);
    }

    #[test]
    fn coords_on_unit_pair() {
        let cloud = GaussianCloud::new(vec![gray([1.0, 0.0, 0.0]), gray([-1.0, 0.0, 0.0])]);
        let f = assemble_features(&cloud, FeatureMode::Coords, None).unwrap();
        assert_eq!(f.dim(), 3);
        assert_eq!(f.point(0), &[1.0, 0.0, 0.0]);
        assert_eq!(f.point(1), &[-1.0, 0.0, 0.0]);
        assert_eq!(f.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn luminance_channel_is_weighted() {
        let cloud = GaussianCloud::new(vec![gray([1.0, 0.0, 0.0]), gray([-1.0, 0.0, 0.0])]);
        let f = assemble_features(&cloud, FeatureMode::CoordsLuminance { weight: 0.3 }, None)
            .unwrap();
        assert_eq!(f.dim(), 4);
        for i in 0..2 {
            assert!((f.point(i)[3] - 0.15).abs() < 1e-15);
        }
    }

    #[test]
    fn rgb_channels_are_weighted() {
        let mut a = gray([1.0, 0.0, 0.0]);
        a.color = [0.2, 0.4, 1.0];
        let cloud = GaussianCloud::new(vec![a, gray([-1.0, 0.0, 0.0])]);
        let f = assemble_features(&cloud, FeatureMode::CoordsRgb { weight: 0.3 }, None).unwrap();
        assert_eq!(f.dim(), 6);
        assert_eq!(&f.point(0)[3..], &[0.3 * 0.2, 0.3 * 0.4, 0.3 * 1.0]);
    }

    #[test]
    fn degenerate_cloud_is_rejected() {
        let cloud = GaussianCloud::new(vec![gray([2.0, 2.0, 2.0]), gray([2.0, 2.0, 2.0])]);
        assert!(matches!(
            assemble_features(&cloud, FeatureMode::Coords, None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn negative_weight_rejected() {
        let cloud = GaussianCloud::new(vec![gray([1.0, 0.0, 0.0]), gray([-1.0, 0.0, 0.0])]);
        assert!(assemble_features(&cloud, FeatureMode::CoordsRgb { weight: -1.0 }, None).is_err());
    }

    #[test]
    fn opacity_weights_sum_to_one() {
        let mut a = gray([1.0, 0.0, 0.0]);
        a.opacity = 0.25;
        let cloud = GaussianCloud::new(vec![a, gray([-1.0, 0.0, 0.0])]);
        let f = assemble_features_weighted(&cloud, FeatureMode::Coords, None, WeightScheme::Opacity)
            .unwrap();
        assert_eq!(f.weights(), &[0.2, 0.8]);
    }

    proptest! {
        #[test]
        fn shared_normalization_preserves_distance_ratios(
            pts in proptest::collection::vec(prop::array::uniform3(-10.0f64..10.0), 4..20),
            other in proptest::collection::vec(prop::array::uniform3(-10.0f64..10.0), 2..10),
        ) {
            let a = GaussianCloud::new(pts.iter().map(|&p| gray(p)).collect());
            let b = GaussianCloud::new(other.iter().map(|&p| gray(p)).collect());
            let fa = match assemble_features(&a, FeatureMode::Coords, None) {
                Ok(f) => f,
                Err(_) => return Ok(()),
            };
            let fb = assemble_features(&b, FeatureMode::Coords, Some(&fa)).unwrap();
            let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let raw = |x: [f64; 3], y: [f64; 3]| dist(&x, &y);
            let r = fa.normalization().radius;
            for i in 0..pts.len() {
                for j in 0..other.len() {
                    let d_raw = raw(pts[i], other[j]);
                    let d_feat = dist(fa.point(i), fb.point(j));
                    prop_assert!((d_feat * r - d_raw).abs() <= 1e-9 * d_raw.max(1.0));
                }
            }
        }

        #[test]
        fn luminance_is_bounded(c in prop::array::uniform3(0.0f64..=1.0)) {
            let l = luminance(c);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&l));
        }
    }
}
