use super::{dist2, Point3, PointCloud};

const BRUTE_FORCE_BELOW: usize = 32;
const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// 3D k-d tree with median splits over a fixed point set.
///
/// Queries return exactly the brute-force argmin of squared distance, with
/// ties broken toward the lowest point index.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NearestNeighborIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points().to_vec())
    }

    /// Panics on an empty slice; [`PointCloud`] rules that out.
    pub fn from_points(points: Vec<Point3>) -> Self {
        assert!(!points.is_empty(), "nearest-neighbor index over no points");
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if points.len() >= BRUTE_FORCE_BELOW {
            build(&points, &mut order, 0, &mut nodes);
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

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// `(index, squared distance)` of the nearest indexed point.
    pub fn query(&self, q: Point3) -> (usize, f64) {
        if self.nodes.is_empty() {
            return brute_force_nearest(&self.points, q);
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // Equal distance may still hide a lower index on the far side.
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Point3], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let axis = widest_axis(points, order);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build(points, lo, offset, nodes);
    let right = build(points, hi, offset + mid, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(points: &[Point3], order: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0)
}

/// Linear scan; lowest index wins ties.
pub fn brute_force_nearest(points: &[Point3], q: Point3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, &p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_point_example() {
        let idx = NearestNeighborIndex::from_points(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let (i, d) = idx.query([0.4, 0.0, 0.0]);
        assert_eq!(i, 0);
        assert!((d - 0.16).abs() < 1e-15);
        assert_eq!(idx.query([1.0, 0.0, 0.0]), (1, 0.0));
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut r = rng::stream(3, &[]);
        for &n in &[5usize, 31, 32, 33, 1000, 2000] {
            let pts: Vec<Point3> = (0..n)
                .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
                .collect();
            let idx = NearestNeighborIndex::from_points(pts.clone());
            for _ in 0..100 {
                let q = [r.random_range(-1.2..1.2), r.random_range(-1.2..1.2), r.random_range(-1.2..1.2)];
                assert_eq!(idx.query(q), brute_force_nearest(&pts, q));
            }
            for (i, &p) in pts.iter().enumerate().step_by(37) {
                assert_eq!(idx.query(p), (i, 0.0));
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Integer lattice with duplicates: many exact ties.
        let mut pts = Vec::new();
        for rep in 0..3 {
            for x in 0..5 {
                for y in 0..5 {
                    pts.push([x as f64, y as f64, (rep % 2) as f64 * 0.0]);
                }
            }
        }
        let idx = NearestNeighborIndex::from_points(pts.clone());
        for x in 0..9 {
            for y in 0..9 {
                let q = [x as f64 * 0.5, y as f64 * 0.5, 0.0];
                assert_eq!(idx.query(q), brute_force_nearest(&pts, q));
            }
        }
    }

    proptest! {
        #[test]
        fn kd_tree_equals_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-10i32..10), 1..300),
            q in prop::array::uniform3(-12i32..12),
        ) {
            // Small integer grid forces ties.
            let pts: Vec<Point3> = pts.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
            let q = [q[0] as f64 * 0.5, q[1] as f64 * 0.5, q[2] as f64 * 0.5];
            let idx = NearestNeighborIndex::from_points(pts.clone());
            prop_assert_eq!(idx.query(q), brute_force_nearest(&pts, q));
        }
    }
}
