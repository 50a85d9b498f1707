use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstyle_core::register::{fit_similarity, select_style_cluster, FitOptions, SimilarityTransform};
use splatstyle_core::spatial::{brute_force_knn, KdTree};

/// Curved, asymmetric surface patch.
fn patch(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.5);
            let y: f64 = rng.random_range(-0.6..0.8);
            [x, y, 0.4 * x * x - 0.2 * y * y + 0.3 * x * x * y]
        })
        .collect()
}

fn random_transform(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    let q = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.14..3.14),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.14..3.14),
    );
    let q = q.quaternion();
    SimilarityTransform {
        translation: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
        rotation: [q.w, q.i, q.j, q.k],
        scale: std::array::from_fn(|_| rng.random_range(0.6..1.6)),
        objective: 0.0,
        degenerate: false,
    }
}

fn rotation_error_deg(a: &SimilarityTransform, b: &SimilarityTransform) -> f64 {
    let dot: f64 = a.rotation.iter().zip(&b.rotation).map(|(x, y)| x * y).sum();
    2.0 * dot.abs().min(1.0).acos().to_degrees()
}

fn bbox_diagonal(pts: &[[f64; 3]]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
}

fn recovered(truth: &SimilarityTransform, fit: &SimilarityTransform, cluster: &[[f64; 3]]) -> bool {
    let rot = rotation_error_deg(truth, fit);
    let scale = (0..3).map(|a| (fit.scale[a] / truth.scale[a] - 1.0).abs()).fold(0.0, f64::max);
    let shift = (Vector3::from(fit.translation) - Vector3::from(truth.translation)).norm();
    rot <= 2.0 && scale <= 0.02 && shift <= 0.01 * bbox_diagonal(cluster)
}

/// Style cloud `Q` of 240 points; the cluster is the preimage of a random
/// 200-point subset under a known transform.
#[test]
fn known_transforms_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    for case in 0..20 {
        let truth = random_transform(&mut rng);
        let style = patch(240, 100 + case);
        let mut idx: Vec<usize> = (0..style.len()).collect();
        idx.shuffle(&mut rng);
        let cluster: Vec<[f64; 3]> = idx[..200].iter().map(|&i| truth.apply_inverse_point(style[i])).collect();
        let fit = fit_similarity(&cluster, &KdTree::new(style), &FitOptions::default()).unwrap();
        if recovered(&truth, &fit, &cluster) {
            hits += 1;
        } else {
            eprintln!("case {case}: rotation error {:.2} deg, scales {:?} vs {:?}", rotation_error_deg(&truth, &fit), fit.scale, truth.scale);
        }
    }
    assert!(hits >= 18, "{hits}/20 recovered");
}

#[test]
fn fit_is_rotation_equivariant() {
    let style = patch(240, 7);
    let tree = KdTree::new(style.clone());
    let truth = random_transform(&mut ChaCha8Rng::seed_from_u64(8));
    let cluster: Vec<[f64; 3]> = style[..200].iter().map(|&y| truth.apply_inverse_point(y)).collect();
    let q = UnitQuaternion::from_euler_angles(0.7, -0.4, 2.0);
    let rotated: Vec<[f64; 3]> = cluster.iter().map(|&x| (q * Vector3::from(x)).into()).collect();
    let a = fit_similarity(&cluster, &tree, &FitOptions::default()).unwrap();
    let b = fit_similarity(&rotated, &tree, &FitOptions::default()).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-6, "{} vs {}", a.objective, b.objective);
    let ra = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(a.rotation[0], a.rotation[1], a.rotation[2], a.rotation[3]));
    let rb = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(b.rotation[0], b.rotation[1], b.rotation[2], b.rotation[3]));
    assert!((ra * q.inverse()).angle_to(&rb).to_degrees() < 1e-3);
}

#[test]
fn rotation_error_is_an_angle() {
    let a = SimilarityTransform::identity();
    let q = UnitQuaternion::from_euler_angles(0.0, 0.0, 10f64.to_radians());
    let q = q.quaternion();
    let b = SimilarityTransform {
        rotation: [q.w, q.i, q.j, q.k],
        ..SimilarityTransform::identity()
    };
    assert!((rotation_error_deg(&a, &b) - 10.0).abs() < 1e-9);
}

#[test]
fn selection_equals_brute_force_union() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let style = patch(rng.random_range(100..400), 200 + case);
        let tree = KdTree::new(style.clone());
        let cluster = patch(rng.random_range(16..60), 300 + case);
        let t = random_transform(&mut rng);
        let cluster: Vec<[f64; 3]> = cluster.iter().map(|&x| t.apply_inverse_point(x)).collect();
        let k = rng.random_range(1..6);
        let got = select_style_cluster(case as usize, &t, &cluster, &tree, k).unwrap();
        let mut k_used = k;
        let expect = loop {
            let mut u: Vec<usize> = cluster
                .iter()
                .flat_map(|&x| brute_force_knn(&style, &t.apply(x), k_used).into_iter().map(|n| n.index))
                .collect();
            u.sort_unstable();
            u.dedup();
            if u.len() >= 16 || k_used >= 16 * k || k_used >= style.len() {
                break u;
            }
            k_used *= 2;
        };
        assert_eq!(got.style_indices, expect, "case {case}");
        assert_eq!(got.k_used, k_used);
    }
}
