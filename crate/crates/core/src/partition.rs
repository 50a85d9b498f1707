//! Seeded k-means (k-means++ initialization, Lloyd iterations) over feature
//! clouds, plus dissolution of clusters too small to register.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::FeatureCloud;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub k: usize,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

impl Partition {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Point indices of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(features: &FeatureCloud, centroids: &[f64]) -> Vec<(usize, f64)> {
    let dim = features.dim();
    features
        .points()
        .par_chunks_exact(dim)
        .map(|x| nearest(x, centroids, dim))
        .collect()
}

fn kmeans_pp(features: &FeatureCloud, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.len();
    let dim = features.dim();
    let w = features.weights();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);

    let pick = |scores: &[f64], chosen: &[bool], rng: &mut ChaCha8Rng| -> usize {
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut last_positive = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > 0.0 {
                    acc += s;
                    last_positive = i;
                    if acc > target {
                        return i;
                    }
                }
            }
            last_positive
        } else {
            chosen.iter().position(|c| !c).unwrap_or(0)
        }
    };

    let first = pick(w, &chosen, rng);
    chosen[first] = true;
    centroids.extend_from_slice(features.point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.point(i), features.point(first))).collect();
    for _ in 1..k {
        let scores: Vec<f64> = d2.iter().zip(w).map(|(d, w)| d * w).collect();
        let next = pick(&scores, &chosen, rng);
        chosen[next] = true;
        let c = features.point(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(features.point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn update_centroids(features: &FeatureCloud, labels: &[usize], k: usize) -> (Vec<f64>, Vec<f64>) {
    let dim = features.dim();
    let mut sums = vec![0.0; k * dim];
    let mut mass = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        let w = features.weights()[i];
        mass[l] += w;
        for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(features.point(i)) {
            *s += w * x;
        }
    }
    (sums, mass)
}

/// k-means with k-means++ seeding. Deterministic for a fixed `seed`.
pub fn kmeans(features: &FeatureCloud, k: usize, seed: u64, max_iter: usize) -> Result<Partition> {
    let n = features.len();
    let dim = features.dim();
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k = {k} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(features, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();

    for _ in 0..max_iter.max(1) {
        let next: Vec<usize> = assign(features, &centroids).into_iter().map(|(c, _)| c).collect();
        if next == labels {
            break;
        }
        labels = next;

        let (sums, mass) = update_centroids(features, &labels, k);
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 && mass[c] > 0.0 {
                for a in 0..dim {
                    centroids[c * dim + a] = sums[c * dim + a] / mass[c];
                }
            } else if counts[c] > 0 {
                // zero-weight members: plain mean
                let mut mean = vec![0.0; dim];
                for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == c) {
                    for (m, x) in mean.iter_mut().zip(features.point(i)) {
                        *m += x / counts[c] as f64;
                    }
                }
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&mean);
            }
        }
        // reseed empty clusters from the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for (i, &l) in labels.iter().enumerate() {
                if counts[l] < 2 {
                    continue;
                }
                let d = sq_dist(features.point(i), &centroids[l * dim..(l + 1) * dim]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                let p = features.point(i).to_vec();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&p);
            }
        }
    }

    // labels are the argmin for the final centroids
    let assigned = assign(features, &centroids);
    let labels: Vec<usize> = assigned.iter().map(|(c, _)| *c).collect();
    let inertia = assigned.iter().map(|(_, d)| d).sum();
    Ok(Partition {
        labels,
        centroids,
        dim,
        k,
        inertia,
    })
}

/// Dissolve clusters with fewer than `min_size` members into the nearest
/// surviving centroid. Survivors keep their centroids and are renumbered in
/// their original order.
pub fn repair_small_clusters(p: &Partition, features: &FeatureCloud, min_size: usize) -> Result<Partition> {
    if features.len() != p.labels.len() || features.dim() != p.dim {
        return Err(Error::Contract("partition does not match features".into()));
    }
    let sizes = p.sizes();
    let survivors: Vec<usize> = (0..p.k).filter(|&c| sizes[c] >= min_size).collect();
    if survivors.is_empty() {
        return Err(Error::DegeneratePartition(format!(
            "all {} clusters have fewer than {min_size} members",
            p.k
        )));
    }
    let mut remap = vec![usize::MAX; p.k];
    let mut centroids = Vec::with_capacity(survivors.len() * p.dim);
    for (new, &old) in survivors.iter().enumerate() {
        remap[old] = new;
        centroids.extend_from_slice(p.centroid(old));
    }
    let mut inertia = 0.0;
    let labels = p
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let x = features.point(i);
            let new = if remap[l] != usize::MAX {
                remap[l]
            } else {
                nearest(x, &centroids, p.dim).0
            };
            inertia += sq_dist(x, &centroids[new * p.dim..(new + 1) * p.dim]);
            new
        })
        .collect();
    Ok(Partition {
        labels,
        centroids,
        dim: p.dim,
        k: survivors.len(),
        inertia,
    })
}
