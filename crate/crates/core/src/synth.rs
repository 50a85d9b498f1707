//! Seeded synthetic scenes for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::cloud::{Gaussian, GaussianCloud};

const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let v: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * v[0], s * v[1], s * v[2]]
}

/// Points spread uniformly over the surface of the cube `[-1, 1]³`, colored
/// per face.
pub fn cube_surface(n: usize, seed: u64) -> GaussianCloud {
    const FACE_COLORS: [[f64; 3]; 6] = [
        [0.85, 0.35, 0.30],
        [0.30, 0.70, 0.40],
        [0.30, 0.45, 0.85],
        [0.90, 0.80, 0.35],
        [0.70, 0.40, 0.80],
        [0.40, 0.80, 0.80],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (2.0 / (n.max(1) as f64 / 6.0).sqrt()).ln();
    let gaussians = (0..n)
        .map(|_| {
            let face = rng.random_range(0..6);
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            p[axis] = sign;
            let shade = rng.random_range(0.9..1.1);
            let color = FACE_COLORS[face].map(|c: f64| (c * shade).min(1.0));
            Gaussian::new(p, color, [scale; 3], IDENTITY_QUAT, 0.9)
        })
        .collect();
    GaussianCloud::new(gaussians)
}

/// A height field `z = h(x, y)` over `[-2, 2]²` made of random bumps, with
/// anisotropic, randomly oriented Gaussians colored by height.
pub fn bump_field(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<([f64; 2], f64, f64)> = (0..24)
        .map(|_| {
            (
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                rng.random_range(-0.4..0.4),
                rng.random_range(0.2..0.6),
            )
        })
        .collect();
    let height = |x: f64, y: f64| -> f64 {
        bumps
            .iter()
            .map(|(c, a, w)| a * (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * w * w)).exp())
            .sum()
    };
    let base = (4.0 / (n.max(1) as f64).sqrt()).ln();
    let gaussians = (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let z = height(x, y);
            let t = (z + 0.5).clamp(0.0, 1.0);
            let color = [0.2 + 0.7 * t, 0.3 + 0.2 * (1.0 - t), 0.8 - 0.6 * t];
            let log_scale = [base + rng.random_range(0.0..0.7), base, base - rng.random_range(0.0..0.7)];
            let opacity = rng.random_range(0.6..1.0);
            Gaussian::new([x, y, z], color, log_scale, random_quat(&mut rng), opacity)
        })
        .collect();
    GaussianCloud::new(gaussians)
}

/// Two isotropic normal blobs of `n_each` points with unit spread, centered
/// at `(∓separation/2, 0, 0)`. The first `n_each` Gaussians form the left blob.
pub fn two_blobs(n_each: usize, separation: f64, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gaussians = Vec::with_capacity(2 * n_each);
    for (cx, color) in [(-0.5 * separation, [0.9, 0.2, 0.2]), (0.5 * separation, [0.2, 0.3, 0.9])] {
        for _ in 0..n_each {
            let p = [
                cx + normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ];
            gaussians.push(Gaussian::new(p, color, [-3.0; 3], IDENTITY_QUAT, 0.9));
        }
    }
    GaussianCloud::new(gaussians)
}

/// `n` evenly spaced points on a circle of `radius` in the `z = 0` plane.
pub fn ring(n: usize, radius: f64, phase: f64, color: [f64; 3]) -> GaussianCloud {
    let gaussians = (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            Gaussian::new([radius * a.cos(), radius * a.sin(), 0.0], color, [-3.0; 3], IDENTITY_QUAT, 0.9)
        })
        .collect();
    GaussianCloud::new(gaussians)
}
