//! Static k-d tree with exact, index-tie-broken k-NN and radius queries.
//!
//! The tree is generic over dimension so the same code serves point
//! positions (3-D) and FPFH descriptors (33-D). Results are always sorted by
//! `(squared distance, point index)`, which makes them identical to a linear
//! scan with a stable sort.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        libm::sqrt(self.dist_sq)
    }

    fn key_cmp(&self, other: &Neighbor) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<const D: usize> KdTree<D> {
    pub fn build(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build_node(&points, &mut order, 0, n, &mut nodes);
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

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    /// The `k` nearest points, sorted by distance then index.
    pub fn knn(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        self.knn_node(0, query, k, &mut best);
        best
    }

    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// All points with `dist <= radius`, sorted by distance then index.
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.nodes.is_empty() || radius < 0.0 {
            return out;
        }
        self.radius_node(0, query, radius * radius, &mut out);
        out.sort_by(|a, b| a.key_cmp(b));
        out
    }

    fn knn_node(&self, node: usize, q: &[f64; D], k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    let cand = Neighbor {
                        index: idx,
                        dist_sq: dist_sq(&self.points[idx], q),
                    };
                    if best.len() < k || cand.key_cmp(best.last().unwrap()) == Ordering::Less {
                        let pos = best
                            .binary_search_by(|n| n.key_cmp(&cand))
                            .unwrap_or_else(|p| p);
                        best.insert(pos, cand);
                        if best.len() > k {
                            best.pop();
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, best);
                // `<=` keeps equal-distance candidates reachable for the index tie-break.
                if best.len() < k || diff * diff <= best.last().unwrap().dist_sq {
                    self.knn_node(far, q, k, best);
                }
            }
        }
    }

    fn radius_node(&self, node: usize, q: &[f64; D], r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    let d = dist_sq(&self.points[idx], q);
                    if d <= r2 {
                        out.push(Neighbor {
                            index: idx,
                            dist_sq: d,
                        });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_node(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_node(right, q, r2, out);
                }
            }
        }
    }
}

fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn build_node<const D: usize>(
    points: &[[f64; D]],
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
    // widest axis
    let mut axis = 0;
    let mut widest = f64::NEG_INFINITY;
    #[allow(clippy::needless_range_loop)]
    for a in 0..D {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &order[start..end] {
            lo = lo.min(points[i][a]);
            hi = hi.max(points[i][a]);
        }
        if hi - lo > widest {
            widest = hi - lo;
            axis = a;
        }
    }
    if widest <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    // left holds [start, mid), all <= value; right holds [mid, end), all >= value
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// k-d tree over a cloud's positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: KdTree<3>,
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    SpatialIndex::from_points(&cloud.points)
}

impl SpatialIndex {
    pub fn from_points(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("spatial index needs at least one point"));
        }
        let pts = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(Self {
            tree: KdTree::build(pts),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn knn(&self, q: &Point3, k: usize) -> Vec<Neighbor> {
        self.tree.knn(&[q.x, q.y, q.z], k)
    }

    pub fn nearest(&self, q: &Point3) -> Neighbor {
        self.tree
            .nearest(&[q.x, q.y, q.z])
            .expect("index is never empty")
    }

    /// Nearest neighbor if it lies within `max_dist`.
    pub fn nearest_within(&self, q: &Point3, max_dist: f64) -> Option<Neighbor> {
        let n = self.nearest(q);
        (n.dist_sq <= max_dist * max_dist).then_some(n)
    }

    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<Neighbor> {
        self.tree.within_radius(&[q.x, q.y, q.z], radius)
    }
}

/// Linear-scan reference used by tests and tiny inputs.
pub fn brute_force_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Neighbor {
            index: i,
            dist_sq: (p - q).norm_squared(),
        })
        .collect();
    all.sort_by(|a, b| a.key_cmp(b));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(
            build_index(&PointCloud::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn singleton() {
        let idx = SpatialIndex::from_points(&[Point3::new(1.0, 2.0, 3.0)]).unwrap();
        let n = idx.knn(&Point3::new(-50.0, 4.0, 9.0), 1);
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].index, 0);
    }

    #[test]
    fn cube_corner_self_query_and_ties() {
        let mut pts = vec![];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = SpatialIndex::from_points(&pts).unwrap();
        let n = idx.knn(&Point3::zeros(), 1);
        assert_eq!(n[0].index, 0);
        assert_eq!(n[0].dist_sq, 0.0);
        // the center is equidistant from all corners: ties resolve by index
        let all = idx.knn(&Point3::new(0.5, 0.5, 0.5), 8);
        let order: Vec<usize> = all.iter().map(|n| n.index).collect();
        assert_eq!(order, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_points_tie_break() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 40];
        let idx = SpatialIndex::from_points(&pts).unwrap();
        let n = idx.knn(&Point3::zeros(), 5);
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn radius_query_matches_scan() {
        let pts: Vec<Point3> = (0..200)
            .map(|i| {
                let f = i as f64;
                Point3::new(libm::sin(f * 0.37), libm::cos(f * 0.11), (f * 0.013) % 1.0)
            })
            .collect();
        let idx = SpatialIndex::from_points(&pts).unwrap();
        let q = Point3::new(0.1, 0.2, 0.3);
        let got: Vec<usize> = idx.within_radius(&q, 0.5).iter().map(|n| n.index).collect();
        let want: Vec<usize> = brute_force_knn(&pts, &q, pts.len())
            .into_iter()
            .filter(|n| n.dist_sq <= 0.25)
            .map(|n| n.index)
            .collect();
        assert_eq!(got, want);
    }
}
