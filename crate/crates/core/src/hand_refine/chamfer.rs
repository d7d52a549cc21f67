//! Exact nearest-neighbour search and the signed Chamfer distance.

use nalgebra::Vector3;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

/// Static 3-d tree over a point set. Ties between equidistant points go to
/// the lower index so results match a brute-force scan exactly.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(points, &mut idx, 0, &mut nodes);
        Self { points: points.to_vec(), nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.root == NONE {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        Some(best)
    }

    fn search(&self, node: u32, q: &Vector3<f64>, best: &mut (usize, f64)) {
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && (n.point as usize) < best.0) {
            *best = (n.point as usize, d2);
        }
        let diff = q[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NONE {
            self.search(near, q, best);
        }
        if far != NONE && diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build(points: &[Vector3<f64>], idx: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if idx.is_empty() {
        return NONE;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][axis].total_cmp(&points[*b as usize][axis]).then(a.cmp(b))
    });
    let slot = nodes.len();
    nodes.push(Node { point: idx[mid], axis: axis as u8, left: NONE, right: NONE });
    let (lo, rest) = idx.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, hi, depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as u32
}

/// Per-query signed distances to an oriented reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedDistances {
    /// Negative where the query lies behind the nearest reference normal.
    pub values: Vec<f64>,
    pub nearest: Vec<usize>,
}

impl SignedDistances {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Signed distance of `q` to reference point `r` with normal `n`.
pub fn signed_distance_to(q: &Vector3<f64>, r: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    let d = q - r;
    let dist = d.norm();
    if d.dot(n) < 0.0 {
        -dist
    } else {
        dist
    }
}

/// Signed Chamfer distance from `query` to an oriented reference set.
pub fn signed_chamfer_tree(query: &[Vector3<f64>], tree: &KdTree, normals: &[Vector3<f64>]) -> SignedDistances {
    let mut values = Vec::with_capacity(query.len());
    let mut nearest = Vec::with_capacity(query.len());
    for q in query {
        let (i, _) = tree.nearest(q).expect("reference set is non-empty");
        values.push(signed_distance_to(q, &tree.points()[i], &normals[i]));
        nearest.push(i);
    }
    SignedDistances { values, nearest }
}

pub fn signed_chamfer(query: &[Vector3<f64>], reference: &[Vector3<f64>], normals: &[Vector3<f64>]) -> SignedDistances {
    signed_chamfer_tree(query, &KdTree::new(reference), normals)
}

/// Mean unsigned nearest-neighbour distance from `query` to `tree`.
pub fn mean_nearest_distance(query: &[Vector3<f64>], tree: &KdTree) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    query.iter().map(|q| tree.nearest(q).map_or(0.0, |(_, d2)| d2.sqrt())).sum::<f64>() / query.len() as f64
}

/// The collision penalty `|min(x + δ, 0)|`: zero above `-δ`, linear below.
pub fn penetration_penalty(x: f64, delta: f64) -> f64 {
    (x + delta).min(0.0).abs()
}
