use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstyle_core::cloud::{FeatureCloud, Normalization};
use splatstyle_core::sinkhorn::{cost_scale, diameter, entropic_ot, sd_gradient, sinkhorn_divergence, SinkhornParams};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, offset: f64) -> FeatureCloud {
    let pts: Vec<f64> = (0..n * d).map(|_| offset + rng.random_range(0.0..1.0)).collect();
    FeatureCloud::uniform(pts, d, Normalization::IDENTITY).unwrap()
}

fn half_sq(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

/// Uniform n-to-n OT is attained at a permutation.
fn exact_ot(a: &FeatureCloud, b: &FeatureCloud) -> f64 {
    let n = a.len();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| half_sq(a.point(i), b.point(p[i]))).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

fn tight(gamma: f64) -> SinkhornParams {
    SinkhornParams {
        gamma,
        max_iter: 200_000,
        tol: 1e-13,
        anneal: true,
    }
}

#[test]
fn permutation_enumeration_is_complete() {
    assert_eq!(permutations(5).len(), 120);
    let mut p = permutations(4);
    p.sort();
    p.dedup();
    assert_eq!(p.len(), 24);
}

/// The entropic value exceeds the exact one by up to `ε log n`, so ε is kept
/// at 1e-4 of the squared diameter.
#[test]
fn small_epsilon_matches_enumerated_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 4..=8 {
        for _ in 0..3 {
            let a = random_cloud(&mut rng, n, 3, 0.0);
            let b = random_cloud(&mut rng, n, 3, 0.2);
            let exact = exact_ot(&a, &b);
            let params = SinkhornParams {
                gamma: 1e-4 * diameter(&a, &b).powi(2),
                max_iter: 5000,
                ..Default::default()
            };
            let ot = entropic_ot(&a, &b, &params).unwrap();
            assert!(ot.converged);
            let rel = (ot.value - exact).abs() / exact;
            assert!(rel < 0.01, "n={n}: entropic {} exact {exact}", ot.value);
        }
    }
}

/// `½ MMD²` for the kernel `−½‖x − y‖²`, by explicit double sums.
fn half_mmd2(a: &FeatureCloud, b: &FeatureCloud) -> f64 {
    let mean_k = |x: &FeatureCloud, y: &FeatureCloud| {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                s += x.weights()[i] * y.weights()[j] * -half_sq(x.point(i), y.point(j));
            }
        }
        s
    };
    0.5 * (mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b))
}

#[test]
fn huge_epsilon_tends_to_half_mmd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let a = random_cloud(&mut rng, 6, 3, 0.0);
        let b = random_cloud(&mut rng, 6, 3, 0.5);
        let params = tight(1e3 * diameter(&a, &b).powi(2));
        let sd = sinkhorn_divergence(&a, &b, &params).unwrap().sd_value;
        let mmd = half_mmd2(&a, &b);
        assert!((sd - mmd).abs() <= 0.01 * mmd, "sd {sd} mmd {mmd}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in [8, 11, 16] {
        let a = random_cloud(&mut rng, n, 3, 0.0);
        let b = random_cloud(&mut rng, n + 2, 3, 0.3);
        let params = tight(0.1);
        let g = sd_gradient(&a, &b, &params).unwrap().gradient;
        let h = 1e-4 * diameter(&a, &b);
        let mut fd = vec![0.0; g.len()];
        for k in 0..g.len() {
            let shifted = |delta: f64| {
                let mut c = a.clone();
                c.points_mut()[k] += delta;
                sinkhorn_divergence(&c, &b, &params).unwrap().sd_value
            };
            fd[k] = (shifted(h) - shifted(-h)) / (2.0 * h);
        }
        let err: f64 = g.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * norm, "n={n}: relative error {}", err / norm);
    }
}

#[test]
fn weighted_measures_are_supported() {
    let a = FeatureCloud::new(vec![0.0, 1.0], 1, vec![0.25, 0.75], Normalization::IDENTITY).unwrap();
    let b = FeatureCloud::new(vec![0.0, 1.0], 1, vec![0.75, 0.25], Normalization::IDENTITY).unwrap();
    // half of the mass moves a distance 1 at cost ½
    let ot = entropic_ot(&a, &b, &tight(1e-4)).unwrap();
    assert!((ot.value - 0.25).abs() < 5e-3, "{}", ot.value);
}

fn cloud_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (1usize..=4, 1usize..=12, 1usize..=12).prop_flat_map(|(d, n, m)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * d),
            prop::collection::vec(-2.0f64..2.0, m * d),
            Just(d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_axioms((pa, pb, d) in cloud_strategy(), gamma in 0.02f64..1.0) {
        let a = FeatureCloud::uniform(pa, d, Normalization::IDENTITY).unwrap();
        let b = FeatureCloud::uniform(pb, d, Normalization::IDENTITY).unwrap();
        let params = tight(gamma);
        let scale = cost_scale(&a, &b).max(f64::MIN_POSITIVE);
        let ab = sinkhorn_divergence(&a, &b, &params).unwrap().sd_value;
        let ba = sinkhorn_divergence(&b, &a, &params).unwrap().sd_value;
        let aa = sinkhorn_divergence(&a, &a, &params).unwrap().sd_value;
        prop_assert!(ab >= -1e-6 * scale);
        prop_assert!(aa.abs() <= 1e-6 * scale);
        prop_assert!((ab - ba).abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn translating_both_measures_changes_nothing((pa, pb, d) in cloud_strategy(), shift in -3.0f64..3.0) {
        let a = FeatureCloud::uniform(pa.clone(), d, Normalization::IDENTITY).unwrap();
        let b = FeatureCloud::uniform(pb.clone(), d, Normalization::IDENTITY).unwrap();
        let a2 = FeatureCloud::uniform(pa.iter().map(|v| v + shift).collect(), d, Normalization::IDENTITY).unwrap();
        let b2 = FeatureCloud::uniform(pb.iter().map(|v| v + shift).collect(), d, Normalization::IDENTITY).unwrap();
        let params = tight(0.2);
        let s1 = sinkhorn_divergence(&a, &b, &params).unwrap().sd_value;
        let s2 = sinkhorn_divergence(&a2, &b2, &params).unwrap().sd_value;
        prop_assert!((s1 - s2).abs() <= 1e-8 * cost_scale(&a, &b).max(1.0));
    }

    #[test]
    fn potentials_satisfy_marginals((pa, pb, d) in cloud_strategy()) {
        let a = FeatureCloud::uniform(pa, d, Normalization::IDENTITY).unwrap();
        let b = FeatureCloud::uniform(pb, d, Normalization::IDENTITY).unwrap();
        let gamma = 1.0;
        let ot = entropic_ot(&a, &b, &tight(gamma)).unwrap();
        prop_assert!(ot.converged);
        let plan = splatstyle_core::sinkhorn::transport_plan(&a, &b, &ot, gamma);
        let m = b.len();
        for i in 0..a.len() {
            let row: f64 = plan[i * m..(i + 1) * m].iter().sum();
            prop_assert!((row - a.weights()[i]).abs() < 1e-9);
        }
        for j in 0..m {
            let col: f64 = (0..a.len()).map(|i| plan[i * m + j]).sum();
            prop_assert!((col - b.weights()[j]).abs() < 1e-9);
        }
    }
}
