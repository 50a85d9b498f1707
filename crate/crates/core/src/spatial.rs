//! Exact k-nearest-neighbor search over 3D points.
//!
//! Results are ordered by `(squared distance, index)`, so equidistant
//! neighbors always come back lowest index first.

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A neighbor: index into the indexed point set and squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }

    fn precedes(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// The `k` nearest indexed points to `query`, closest first.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Vec<Neighbor> {
        let mut best = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        self.search(0, query, k, &mut best);
        best
    }

    pub fn nearest(&self, query: &[f64; 3]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    if best.len() == k && !cand.precedes(&best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|b| b.precedes(&cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // `<=` keeps equidistant, lower-index candidates reachable
                if best.len() < k || diff * diff <= best[k - 1].dist2 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

fn build(
    points: &[[f64; 3]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] - lo[axis] <= 0.0 {
        // all points coincide
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&i, &j| points[i][axis].total_cmp(&points[j][axis]));
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Brute-force kNN, the reference ordering for [`KdTree::knn`].
pub fn brute_force_knn(points: &[[f64; 3]], query: &[f64; 3], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist2: dist2(query, p),
        })
        .collect();
    all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
    all.truncate(k);
    all
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_knn_distance(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let tree = KdTree::new(points.to_vec());
    let k = k.min(points.len().saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if k == 0 {
                return 0.0;
            }
            let nn = tree.knn(p, k + 1);
            let total: f64 = nn
                .iter()
                .filter(|n| n.index != i)
                .take(k)
                .map(Neighbor::distance)
                .sum();
            total / k as f64
        })
        .collect()
}

/// For every point, its `k` nearest other points (fewer when the set is small).
pub fn neighbor_graph(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(points.to_vec());
    let k = k.min(points.len().saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            tree.knn(p, k + 1)
                .into_iter()
                .filter(|n| n.index != i)
                .take(k)
                .map(|n| n.index)
                .collect()
        })
        .collect()
}
