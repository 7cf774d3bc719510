//! Exact k-nearest-neighbor search over sample locations.
//!
//! A static kd-tree. Results are ordered by distance with ties broken by
//! ascending point id, so every query returns exactly what a linear scan
//! sorted on `(distance, id)` would.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Distance used between `(lon, lat)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Euclidean distance on raw degrees.
    #[default]
    Planar,
    /// Longitude scaled by the cosine of the mean indexed latitude.
    Equirectangular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    // min x, min y, max x, max y
    bbox: [f64; 4],
    kind: NodeKind,
}

impl Node {
    fn min_d2(&self, q: [f64; 2]) -> f64 {
        let dx = (self.bbox[0] - q[0]).max(q[0] - self.bbox[2]).max(0.0);
        let dy = (self.bbox[1] - q[1]).max(q[1] - self.bbox[3]).max(0.0);
        dx * dx + dy * dy
    }
}

/// Immutable kd-tree over planar coordinates.
#[derive(Debug, Clone)]
pub struct PointIndex {
    original: Vec<[f64; 2]>,
    coords: Vec<[f64; 2]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    metric: Metric,
    lon_scale: f64,
}

#[inline]
fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

impl PointIndex {
    pub fn build(locations: &[[f64; 2]]) -> Result<Self> {
        Self::build_with(locations, Metric::Planar)
    }

    /// Point ids are positions in `locations`.
    pub fn build_with(locations: &[[f64; 2]], metric: Metric) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(locations.len());
        for (i, p) in locations.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::param(format!("non-finite location at id {i}")));
            }
            if !seen.insert(((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits())) {
                let first = locations[..i].iter().position(|q| q == p).unwrap_or(0);
                return Err(Error::DuplicateLocation {
                    lon: p[0],
                    lat: p[1],
                    first,
                    second: i,
                });
            }
        }
        let lon_scale = match metric {
            Metric::Planar => 1.0,
            Metric::Equirectangular => {
                let mean_lat = locations.iter().map(|p| p[1]).sum::<f64>() / locations.len() as f64;
                mean_lat.to_radians().cos()
            }
        };
        let coords: Vec<[f64; 2]> = locations.iter().map(|p| [p[0] * lon_scale, p[1]]).collect();
        let mut index = PointIndex {
            original: locations.to_vec(),
            order: (0..coords.len()).collect(),
            coords,
            nodes: Vec::new(),
            metric,
            lon_scale,
        };
        let n = index.order.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut bbox = [
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ];
        for &i in &self.order[start..end] {
            let p = self.coords[i];
            bbox[0] = bbox[0].min(p[0]);
            bbox[1] = bbox[1].min(p[1]);
            bbox[2] = bbox[2].max(p[0]);
            bbox[3] = bbox[3].max(p[1]);
        }
        let slot = self.nodes.len();
        self.nodes.push(Node {
            bbox,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return slot;
        }
        let axis = if bbox[2] - bbox[0] >= bbox[3] - bbox[1] {
            0
        } else {
            1
        };
        let mid = start + (end - start) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a][axis]
                .total_cmp(&coords[b][axis])
                .then_with(|| a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot].kind = NodeKind::Inner { left, right };
        slot
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Location of point `id` as given at build time.
    pub fn location(&self, id: usize) -> [f64; 2] {
        self.original[id]
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.len() {
            Err(Error::NeighborCount { k, n: self.len() })
        } else {
            Ok(())
        }
    }

    /// The `k` nearest points to `q`, nearest first, ties by ascending id.
    pub fn knn(&self, q: [f64; 2], k: usize) -> Result<Vec<Neighbor>> {
        self.check_k(k)?;
        let mut out = Vec::with_capacity(k);
        self.knn_into(q, k, &mut out);
        Ok(out)
    }

    /// Distance from `q` to its k-th nearest indexed point.
    pub fn kth_distance(&self, q: [f64; 2], k: usize) -> Result<f64> {
        self.check_k(k)?;
        let mut out = Vec::with_capacity(k);
        self.knn_into(q, k, &mut out);
        Ok(out[k - 1].dist)
    }

    /// Unchecked variant for hot loops; `k` must be in `1..=len`.
    pub(crate) fn knn_into(&self, q: [f64; 2], k: usize, out: &mut Vec<Neighbor>) {
        debug_assert!(k >= 1 && k <= self.len());
        let q = [q[0] * self.lon_scale, q[1]];
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        out.clear();
        out.extend(heap.into_sorted_vec().into_iter().map(|c| Neighbor {
            id: c.id,
            dist: c.d2.sqrt(),
        }));
    }

    fn search(&self, node: usize, q: [f64; 2], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let cand = Candidate {
                        d2: sq_dist(self.coords[id], q),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                let dl = self.nodes[left].min_d2(q);
                let dr = self.nodes[right].min_d2(q);
                let order = if dl <= dr {
                    [(left, dl), (right, dr)]
                } else {
                    [(right, dr), (left, dl)]
                };
                for (child, d) in order {
                    // equal distance may still win on id
                    if heap.len() < k || d <= heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                        self.search(child, q, k, heap);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; 2]], q: [f64; 2], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                (dx * dx + dy * dy, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter()
            .take(k)
            .map(|(d2, i)| (i, d2.sqrt()))
            .collect()
    }

    fn flat(v: &[Neighbor]) -> Vec<(usize, f64)> {
        v.iter().map(|n| (n.id, n.dist)).collect()
    }

    #[test]
    fn tiny_examples() {
        let idx = PointIndex::build(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(flat(&idx.knn([0.0, 0.0], 1).unwrap()), vec![(0, 0.0)]);
        let r = idx.knn([0.9, 0.0], 2).unwrap();
        assert_eq!(r[0].id, 1);
        assert_eq!(r[1].id, 0);
        assert!((r[0].dist - 0.1).abs() < 1e-12 && (r[1].dist - 0.9).abs() < 1e-12);

        let idx = PointIndex::build(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(idx.kth_distance([0.0, 0.0], 2).unwrap(), 5.0);
        assert_eq!(idx.kth_distance([3.0, 4.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let idx = PointIndex::build(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let r = idx.knn([0.0, 0.0], 3).unwrap();
        assert_eq!(r.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn k_is_never_clamped() {
        let idx = PointIndex::build(&[[0.0, 0.0]]).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(matches!(
            idx.knn([0.0, 0.0], 2),
            Err(Error::NeighborCount { .. })
        ));
        assert!(idx.knn([0.0, 0.0], 0).is_err());
    }

    #[test]
    fn build_errors() {
        assert!(matches!(PointIndex::build(&[]), Err(Error::EmptyDataset)));
        assert!(matches!(
            PointIndex::build(&[[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]]),
            Err(Error::DuplicateLocation {
                first: 0,
                second: 2,
                ..
            })
        ));
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 2]> = (0..1000)
            .map(|_| [rng.random_range(-85.0..-80.0), rng.random_range(30.0..35.0)])
            .collect();
        let idx = PointIndex::build(&pts).unwrap();
        for _ in 0..50 {
            let q = [rng.random_range(-86.0..-79.0), rng.random_range(29.0..36.0)];
            assert_eq!(flat(&idx.knn(q, 7).unwrap()), brute(&pts, q, 7));
            assert_eq!(idx.kth_distance(q, 7).unwrap(), brute(&pts, q, 7)[6].1);
        }
    }

    #[test]
    fn lattice_ties_match_linear_scan() {
        let pts: Vec<[f64; 2]> = (0..400)
            .map(|i| [(i % 20) as f64, (i / 20) as f64])
            .collect();
        let idx = PointIndex::build(&pts).unwrap();
        for q in [[5.0, 5.0], [5.5, 5.5], [0.0, 19.0], [10.5, 3.0]] {
            for k in [1, 4, 9, 25] {
                assert_eq!(flat(&idx.knn(q, k).unwrap()), brute(&pts, q, k));
            }
        }
    }

    #[test]
    fn equirectangular_scales_longitude() {
        let pts = [[0.0, 60.0], [1.0, 60.0], [0.0, 60.6]];
        let idx = PointIndex::build_with(&pts, Metric::Equirectangular).unwrap();
        let r = idx.knn([0.0, 60.0], 2).unwrap();
        // one degree of lon at 60.2N is ~0.497 deg of lat
        assert_eq!(r[1].id, 1);
        assert!((r[1].dist - 60.2f64.to_radians().cos()).abs() < 1e-12);
        assert_eq!(idx.location(1), [1.0, 60.0]);
    }
}
