//! Exact fixed-radius neighbor search over an immutable point cloud.
//!
//! The index answers closed-ball queries `{i : ‖y_i − x‖ ≤ h}` exactly; no
//! approximation is permitted anywhere in the pipeline because the privacy
//! calibration assumes the true neighbor set.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::manifolds::PointCloud;

const LEAF_SIZE: usize = 32;

#[derive(Debug, Clone)]
enum Node {
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        start: usize,
        end: usize,
    },
}

/// Spatial tree over the rows of a point cloud supporting exact radius queries.
#[derive(Debug, Clone)]
pub struct RadiusIndex {
    cloud: Arc<PointCloud>,
    nodes: Vec<Node>,
    /// Row indices permuted into tree order; leaves own contiguous ranges.
    perm: Vec<u32>,
    root: usize,
}

/// Build a spatial index over the cloud. Duplicate points are kept
/// (multiset semantics); queries return every matching row index.
pub fn build_index(cloud: impl Into<Arc<PointCloud>>) -> RadiusIndex {
    let cloud = cloud.into();
    let n = cloud.len();
    assert!(n >= 1, "index requires at least one point");
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut nodes = Vec::new();
    let root = build_node(&cloud, &mut perm, 0, n, &mut nodes);
    RadiusIndex {
        cloud,
        nodes,
        perm,
        root,
    }
}

fn build_node(
    cloud: &PointCloud,
    perm: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // Split on the coordinate of largest spread at this node.
    let dim = cloud.dim();
    let mut best_dim = 0;
    let mut best_spread = -1.0;
    for d in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &perm[start..end] {
            let v = cloud.point(i as usize)[d];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = d;
        }
    }
    let mid = start + count / 2;
    let slice = &mut perm[start..end];
    slice.select_nth_unstable_by(count / 2, |&a, &b| {
        let va = cloud.point(a as usize)[best_dim];
        let vb = cloud.point(b as usize)[best_dim];
        va.partial_cmp(&vb).expect("finite coordinates")
    });
    let split_value = cloud.point(perm[mid] as usize)[best_dim];
    let left = build_node(cloud, perm, start, mid, nodes);
    let right = build_node(cloud, perm, mid, end, nodes);
    nodes.push(Node::Split {
        dim: best_dim,
        value: split_value,
        left,
        right,
    });
    nodes.len() - 1
}

impl RadiusIndex {
    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.len() == 0
    }

    /// All row indices within the closed ball of radius `h` around `x`,
    /// in ascending order. An empty result is allowed.
    pub fn radius_query(&self, x: &[f64], h: f64) -> Result<Vec<u32>> {
        if x.len() != self.cloud.dim() {
            return Err(Error::DimensionMismatch {
                left_name: "query",
                left: x.len(),
                right_name: "cloud",
                right: self.cloud.dim(),
            });
        }
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::invalid("h", format!("radius {h} must be positive")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "radius_query",
            });
        }
        let mut out = Vec::new();
        self.visit(self.root, x, h, h * h, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn visit(&self, node: usize, x: &[f64], h: f64, h2: f64, out: &mut Vec<u32>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                let dim = self.cloud.dim();
                for &i in &self.perm[start..end] {
                    let p = self.cloud.point(i as usize);
                    let mut acc = 0.0;
                    for d in 0..dim {
                        let diff = p[d] - x[d];
                        acc += diff * diff;
                        if acc > h2 {
                            break;
                        }
                    }
                    if acc <= h2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                // Closed ball: boundary containment uses ≤ on both sides.
                if x[dim] - h <= value {
                    self.visit(left, x, h, h2, out);
                }
                if x[dim] + h >= value {
                    self.visit(right, x, h, h2, out);
                }
            }
        }
    }

    /// Number of points in the closed ball, without materializing indices.
    pub fn radius_count(&self, x: &[f64], h: f64) -> Result<usize> {
        Ok(self.radius_query(x, h)?.len())
    }
}

/// Brute-force closed-ball scan; the oracle the index is tested against.
pub fn linear_scan(cloud: &PointCloud, x: &[f64], h: f64) -> Vec<u32> {
    let h2 = h * h;
    (0..cloud.len() as u32)
        .filter(|&i| {
            let p = cloud.point(i as usize);
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 <= h2
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cloud_from(rows: Vec<Vec<f64>>) -> PointCloud {
        let dim = rows[0].len();
        PointCloud::from_rows(rows.into_iter().flatten().collect(), dim).unwrap()
    }

    #[test]
    fn single_point_cloud() {
        let idx = build_index(cloud_from(vec![vec![1.0, 2.0]]));
        assert_eq!(idx.radius_query(&[1.0, 2.0], 0.5).unwrap(), vec![0]);
        assert_eq!(idx.radius_query(&[5.0, 5.0], 0.5).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn duplicates_all_returned() {
        let idx = build_index(cloud_from(vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
        ]));
        assert_eq!(idx.radius_query(&[0.0, 0.0], 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn boundary_is_closed() {
        let idx = build_index(cloud_from(vec![vec![0.0], vec![1.0], vec![2.0]]));
        // Point at exactly distance h is included.
        assert_eq!(idx.radius_query(&[0.0], 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let idx = build_index(cloud_from(vec![vec![0.0, 0.0]]));
        assert!(idx.radius_query(&[0.0], 1.0).is_err());
        assert!(idx.radius_query(&[0.0, 0.0], 0.0).is_err());
        assert!(idx.radius_query(&[f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn matches_linear_scan_fuzz() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let dims = [1usize, 2, 3, 5, 8];
        for trial in 0..40 {
            let dim = dims[trial % dims.len()];
            let n = 1 + rng.random_range(0..1000);
            let coords: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let cloud = PointCloud::from_rows(coords, dim).unwrap();
            let idx = build_index(cloud.clone());
            for _ in 0..100 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let h = rng.random::<f64>() * 2.0 + 1e-3;
                let got = idx.radius_query(&x, h).unwrap();
                let want = linear_scan(&cloud, &x, h);
                assert_eq!(got, want);
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_radius(
            pts in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 3), 1..60),
            qx in proptest::collection::vec(-10.0f64..10.0, 3),
            h1 in 0.01f64..3.0,
            h2 in 0.01f64..3.0,
        ) {
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let idx = build_index(cloud_from(pts));
            let small = idx.radius_query(&qx, lo).unwrap();
            let large = idx.radius_query(&qx, hi).unwrap();
            let large_set: std::collections::HashSet<_> = large.iter().collect();
            prop_assert!(small.iter().all(|i| large_set.contains(i)));
        }
    }
}
