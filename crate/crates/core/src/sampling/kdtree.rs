//! Balanced kd-tree with exact k-nearest-neighbour queries.
//!
//! The tree is implicit: `order` holds point indices such that the node of a
//! subrange `[lo, hi)` is `order[(lo + hi) / 2]`, its left subtree is
//! `[lo, mid)` and its right subtree `[mid + 1, hi)`. Splits are at the
//! median along axis `depth % d`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SamplingError;

#[derive(Clone, Debug)]
pub struct KdTree {
    coords: Vec<f64>,
    dim: usize,
    order: Vec<usize>,
}

/// Candidate ordered by `(squared distance, index)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

/// Squared Euclidean distance, summed in coordinate order.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// Builds the tree over `coords`, a row-major `n × dim` array.
    ///
    /// # Panics
    ///
    /// If `dim` is zero or does not divide `coords.len()`.
    pub fn build(coords: &[f64], dim: usize) -> Self {
        assert!(
            dim > 0 && coords.len().is_multiple_of(dim),
            "coordinates must be n × dim"
        );
        let n = coords.len() / dim;
        let mut tree = Self {
            coords: coords.to_vec(),
            dim,
            order: (0..n).collect(),
        };
        let mut order = std::mem::take(&mut tree.order);
        tree.build_range(&mut order, 0);
        tree.order = order;
        tree
    }

    fn build_range(&self, idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % self.dim;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis).total_cmp(&self.coord(b, axis)).then(a.cmp(&b))
        });
        let (left, rest) = idx.split_at_mut(mid);
        self.build_range(left, depth + 1);
        self.build_range(&mut rest[1..], depth + 1);
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.coords[i * self.dim + axis]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(point index, split axis, split value)` of the root.
    pub fn root(&self) -> Option<(usize, usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let i = self.order[self.order.len() / 2];
        Some((i, 0, self.coord(i, 0)))
    }

    /// Point indices in in-order traversal.
    pub fn in_order(&self) -> Vec<usize> {
        // the implicit layout already is in-order
        self.order.clone()
    }

    /// Depth of the deepest node; `0` for a single point.
    pub fn depth(&self) -> usize {
        fn go(len: usize) -> usize {
            if len <= 1 {
                0
            } else {
                let mid = len / 2;
                1 + go(mid).max(go(len - mid - 1))
            }
        }
        go(self.len())
    }

    /// Checks the median-split invariant of every node.
    pub fn is_valid(&self) -> bool {
        self.valid_range(0, self.len(), 0)
    }

    fn valid_range(&self, lo: usize, hi: usize, depth: usize) -> bool {
        if hi - lo <= 1 {
            return true;
        }
        let axis = depth % self.dim;
        let mid = (lo + hi) / 2;
        let split = self.coord(self.order[mid], axis);
        self.order[lo..mid].iter().all(|&i| self.coord(i, axis) <= split)
            && self.order[mid + 1..hi].iter().all(|&i| self.coord(i, axis) >= split)
            && self.valid_range(lo, mid, depth + 1)
            && self.valid_range(mid + 1, hi, depth + 1)
    }

    /// The `k` nearest other points of point `query`, ascending by
    /// distance, ties broken by smaller index.
    pub fn knn_query(&self, query: usize, k: usize) -> Result<Vec<(usize, f64)>, SamplingError> {
        let n = self.len();
        if query >= n {
            return Err(SamplingError::IndexOutOfRange { index: query, len: n });
        }
        if k == 0 || k + 1 > n {
            return Err(SamplingError::NeighborCount { k, n });
        }
        let q = self.point(query).to_vec();
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&q, query, k, 0, n, 0, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        Ok(found.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        q: &[f64],
        skip: usize,
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        if i != skip {
            let cand = Candidate {
                dist2: squared_distance(q, self.point(i)),
                index: i,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k candidates") {
                heap.pop();
                heap.push(cand);
            }
        }
        let axis = depth % self.dim;
        let diff = q[axis] - self.coord(i, axis);
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, skip, k, near.0, near.1, depth + 1, heap);
        // equal bound: a tie on the far side may still win on index
        let worst = heap.peek().map(|c| c.dist2);
        if heap.len() < k || diff * diff <= worst.unwrap_or(f64::INFINITY) {
            self.search(q, skip, k, far.0, far.1, depth + 1, heap);
        }
    }
}
