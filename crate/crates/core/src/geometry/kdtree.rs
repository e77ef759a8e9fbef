//! Exact k-nearest-neighbor search over points of arbitrary dimension.
//!
//! Results are ordered by `(distance, index)`, so equal distances resolve to the
//! smaller stored index. Every query is exact; pruning only skips subtrees whose
//! splitting plane lies strictly farther than the current k-th candidate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

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

/// A static kd-tree over a flat, row-major point store.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    data: Vec<f64>,
    // permutation of point indices; leaves own contiguous ranges of it
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Builds a tree over `data`, interpreted as rows of length `dim`.
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0, "kd-tree dimension must be positive");
        assert_eq!(data.len() % dim, 0, "data length must be a multiple of dim");
        let n = data.len() / dim;
        let mut tree = KdTree {
            dim,
            data,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), dim, "row dimension mismatch");
            data.extend_from_slice(row);
        }
        Self::new(data, dim)
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

    pub fn point(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the axis of largest spread
        let dim = self.dim;
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &self.order[start..end] {
                let v = self.data[i * dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        {
            let data = &self.data;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                data[a * dim + best_axis]
                    .total_cmp(&data[b * dim + best_axis])
                    .then(a.cmp(&b))
            });
        }
        let value = self.data[self.order[mid] * dim + best_axis];
        self.nodes.push(Node::Split {
            axis: best_axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    fn dist2(&self, index: usize, query: &[f64]) -> f64 {
        self.point(index)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// The `min(k, len)` nearest stored points as `(index, distance)`, ordered by
    /// non-decreasing distance with ties broken by index.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter()
            .map(|c| (c.index, c.dist2.sqrt()))
            .collect()
    }

    fn knn_node(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Candidate {
                        dist2: self.dist2(i, query),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, heap);
                let plane2 = diff * diff;
                if heap.len() < k || plane2 <= heap.peek().unwrap().dist2 {
                    self.knn_node(far, query, k, heap);
                }
            }
        }
    }

    /// All stored points within `radius` (inclusive) of `query`, ordered like [`KdTree::knn`].
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let r2 = radius * radius;
        self.radius_node(0, query, r2, &mut out);
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    fn radius_node(&self, node: usize, query: &[f64], r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = self.dist2(i, query);
                    if d2 <= r2 {
                        out.push((i, d2));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, query, r2, out);
                if diff * diff <= r2 {
                    self.radius_node(far, query, r2, out);
                }
            }
        }
    }
}
