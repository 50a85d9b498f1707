use proptest::prelude::*;
use splatstyle_core::cloud::{assemble_features, FeatureCloud, FeatureMode, Normalization};
use splatstyle_core::partition::{kmeans, repair_small_clusters, Partition};
use splatstyle_core::synth::two_blobs;

fn sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

#[test]
fn two_blobs_split_by_nearest_center() {
    for seed in 0..5 {
        let cloud = two_blobs(100, 10.0, seed);
        let feats = assemble_features(&cloud, FeatureMode::CoordsRgb { weight: 0.3 }, None).unwrap();
        let p = kmeans(&feats, 2, seed, 100).unwrap();
        let centers = [[-5.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let oracle: Vec<usize> = cloud
            .gaussians
            .iter()
            .map(|g| usize::from(sq(&g.position, &centers[1]) < sq(&g.position, &centers[0])))
            .collect();
        // the oracle recovers the generating blobs
        assert!(oracle[..100].iter().all(|&l| l == 0) && oracle[100..].iter().all(|&l| l == 1));
        let flip = p.labels[0];
        let relabeled: Vec<usize> = p.labels.iter().map(|&l| l ^ flip).collect();
        assert_eq!(relabeled, oracle, "seed {seed}");
    }
}

#[test]
fn labels_are_a_lloyd_fixed_point() {
    let cloud = two_blobs(150, 3.0, 9);
    let feats = assemble_features(&cloud, FeatureMode::CoordsRgb { weight: 0.3 }, None).unwrap();
    let p = kmeans(&feats, 7, 1, 100).unwrap();
    for i in 0..feats.len() {
        let d: Vec<f64> = (0..p.k).map(|c| sq(feats.point(i), p.centroid(c))).collect();
        let best = (0..p.k).fold(0, |b, c| if d[c] < d[b] { c } else { b });
        assert_eq!(p.labels[i], best);
    }
    let inertia: f64 = (0..feats.len()).map(|i| sq(feats.point(i), p.centroid(p.labels[i]))).sum();
    assert!((inertia - p.inertia).abs() <= 1e-9 * inertia);
}

#[test]
fn small_cluster_merges_into_the_big_one() {
    let mut pts: Vec<f64> = (0..500).flat_map(|i| [(i % 10) as f64, (i / 10) as f64 * 0.1, 0.0]).collect();
    pts.extend([20.0, 0.0, 0.0, 21.0, 0.0, 0.0, 20.5, 1.0, 0.0]);
    let f = FeatureCloud::uniform(pts, 3, Normalization::IDENTITY).unwrap();
    let mut labels = vec![0; 500];
    labels.extend([1, 1, 1]);
    let p = Partition {
        labels,
        centroids: vec![4.5, 2.45, 0.0, 20.5, 1.0 / 3.0, 0.0],
        dim: 3,
        k: 2,
        inertia: 0.0,
    };
    let r = repair_small_clusters(&p, &f, 16).unwrap();
    assert_eq!(r.k, 1);
    assert!(r.labels.iter().all(|&l| l == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn repair_leaves_only_large_clusters(
        pts in prop::collection::vec(-5.0f64..5.0, 60 * 3..=150 * 3),
        k in 4usize..20,
        min_size in 2usize..12,
        seed in 0u64..1000,
    ) {
        let n = pts.len() / 3;
        let f = FeatureCloud::uniform(pts[..n * 3].to_vec(), 3, Normalization::IDENTITY).unwrap();
        let p = kmeans(&f, k, seed, 50).unwrap();
        let sizes = p.sizes();
        match repair_small_clusters(&p, &f, min_size) {
            Err(_) => prop_assert!(sizes.iter().all(|&s| s < min_size)),
            Ok(r) => {
                prop_assert!(r.sizes().iter().all(|&s| s >= min_size));
                let survivors: Vec<usize> = (0..p.k).filter(|&c| sizes[c] >= min_size).collect();
                prop_assert_eq!(r.k, survivors.len());
                for i in 0..n {
                    let x = f.point(i);
                    let expect = match survivors.iter().position(|&c| c == p.labels[i]) {
                        Some(kept) => kept,
                        None => {
                            // brute-force nearest surviving centroid, lowest index on ties
                            let d: Vec<f64> = survivors.iter().map(|&c| sq(x, p.centroid(c))).collect();
                            (0..d.len()).fold(0, |b, c| if d[c] < d[b] { c } else { b })
                        }
                    };
                    prop_assert_eq!(r.labels[i], expect);
                }
            }
        }
    }
}
