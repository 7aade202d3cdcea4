//! 2-D k-d tree with deterministic tie-breaking.
//!
//! Neighbors are ordered by `(squared distance, source index)`, so among
//! equidistant nodes the lowest source index always wins. Squared
//! distances are computed as `dx*dx + dy*dy` everywhere, which makes the
//! tree agree exactly with a brute-force scan.

use crate::error::{Error, Result};
use crate::fieldio::Node;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    #[inline]
    fn precedes(&self, other: &Neighbor) -> bool {
        self.dist_sq < other.dist_sq || (self.dist_sq == other.dist_sq && self.index < other.index)
    }
}

#[inline]
pub(crate) fn dist_sq(a: &Node, b: &Node) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Implicit balanced tree over a permutation of the source nodes: the
/// median of every index range `[lo, hi)` sits at `(lo + hi) / 2`.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    order: Vec<usize>,
    split_dim: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(nodes: &[Node]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidDataset(
                "cannot index an empty node set".into(),
            ));
        }
        if let Some(i) = nodes
            .iter()
            .position(|n| !n[0].is_finite() || !n[1].is_finite())
        {
            return Err(Error::InvalidDataset(format!(
                "node {i} has non-finite coordinates"
            )));
        }
        // Reuse the dataset duplicate rule.
        crate::fieldio::FieldDataset::new("index", nodes.to_vec(), vec![0.0; nodes.len()])?;

        let mut order: Vec<usize> = (0..nodes.len()).collect();
        let mut split_dim = vec![0u8; nodes.len()];
        build_range(nodes, &mut order, &mut split_dim);
        Ok(SpatialIndex {
            nodes: nodes.to_vec(),
            order,
            split_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nearest(&self, query: &Node) -> Neighbor {
        self.k_nearest(query, 1)[0]
    }

    /// Up to `k` nearest nodes sorted by `(distance, index)`.
    pub fn k_nearest(&self, query: &Node, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.nodes.len());
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(query, k, 0, self.nodes.len(), &mut best);
        }
        best
    }

    fn search(&self, q: &Node, k: usize, lo: usize, hi: usize, best: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.nodes[idx];
        offer(
            best,
            k,
            Neighbor {
                index: idx,
                dist_sq: dist_sq(q, p),
            },
        );

        let dim = self.split_dim[mid] as usize;
        let diff = q[dim] - p[dim];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, near.0, near.1, best);
        // `<=` keeps equidistant candidates with lower indices reachable.
        if best.len() < k || diff * diff <= best[best.len() - 1].dist_sq {
            self.search(q, k, far.0, far.1, best);
        }
    }
}

fn offer(best: &mut Vec<Neighbor>, k: usize, cand: Neighbor) {
    if best.len() == k && !cand.precedes(&best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|b| b.precedes(&cand));
    best.insert(pos, cand);
    best.truncate(k);
}

fn build_range(nodes: &[Node], order: &mut [usize], split_dim: &mut [u8]) {
    let n = order.len();
    if n == 0 {
        return;
    }
    let spread = |d: usize| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in order.iter() {
            lo = lo.min(nodes[i][d]);
            hi = hi.max(nodes[i][d]);
        }
        hi - lo
    };
    let dim = if spread(0) >= spread(1) { 0 } else { 1 };
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| nodes[a][dim].total_cmp(&nodes[b][dim]));
    split_dim[mid] = dim as u8;

    let (left, right) = order.split_at_mut(mid);
    let (left_dims, right_dims) = split_dim.split_at_mut(mid);
    build_range(nodes, left, left_dims);
    build_range(nodes, &mut right[1..], &mut right_dims[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(nodes: &[Node], q: &Node, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = nodes
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist_sq: dist_sq(q, p),
            })
            .collect();
        all.sort_by(|a, b| a.dist_sq.total_cmp(&b.dist_sq).then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }

    #[test]
    fn single_node() {
        let idx = SpatialIndex::build(&[[3.0, -1.0]]).unwrap();
        for q in [[0.0, 0.0], [1e6, -1e6], [3.0, -1.0]] {
            assert_eq!(idx.nearest(&q).index, 0);
        }
        assert_eq!(idx.k_nearest(&[0.0, 0.0], 5).len(), 1);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let nodes = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let idx = SpatialIndex::build(&nodes).unwrap();
        assert_eq!(idx.nearest(&[0.0, 0.0]).index, 0);
        let reversed: Vec<Node> = nodes.iter().rev().copied().collect();
        let idx = SpatialIndex::build(&reversed).unwrap();
        assert_eq!(idx.nearest(&[0.0, 0.0]).index, 0);
        let got: Vec<usize> = idx
            .k_nearest(&[0.0, 0.0], 4)
            .iter()
            .map(|n| n.index)
            .collect();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let nodes: Vec<Node> = (0..1000)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let idx = SpatialIndex::build(&nodes).unwrap();
        for _ in 0..100 {
            let q = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
            assert_eq!(idx.nearest(&q), brute_force(&nodes, &q, 1)[0]);
            assert_eq!(idx.k_nearest(&q, 8), brute_force(&nodes, &q, 8));
        }
    }

    #[test]
    fn lattice_with_many_ties() {
        let nodes: Vec<Node> = (0..20)
            .flat_map(|i| (0..20).map(move |j| [i as f64, j as f64]))
            .collect();
        let idx = SpatialIndex::build(&nodes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q = [
                rng.gen_range(0..40) as f64 * 0.5,
                rng.gen_range(0..40) as f64 * 0.5,
            ];
            assert_eq!(idx.k_nearest(&q, 6), brute_force(&nodes, &q, 6));
        }
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(SpatialIndex::build(&[]).is_err());
        assert!(SpatialIndex::build(&[[0.0, 0.0], [0.0, 0.0]]).is_err());
    }
}
