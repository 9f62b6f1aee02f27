//! Exact and cell-probe nearest-neighbour search over a flat key array.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Which index to build over a datastore.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSpec {
    ExactScan,
    /// k-means cells; queries scan the `n_probe` cells with the nearest
    /// centroids.
    CellProbe {
        n_cells: usize,
        n_probe: usize,
        /// Lloyd refinement iterations after seeding.
        iterations: usize,
        /// Upper bound on the number of entries used for centroid training
        /// (evenly strided over the store). `None` trains on every entry.
        max_train: Option<usize>,
    },
}

impl IndexSpec {
    pub const DEFAULT_ITERATIONS: usize = 10;

    pub fn cell_probe(n_cells: usize, n_probe: usize) -> Self {
        IndexSpec::CellProbe {
            n_cells,
            n_probe,
            iterations: Self::DEFAULT_ITERATIONS,
            max_train: None,
        }
    }
}

/// Built search structure.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchIndex {
    ExactScan,
    CellProbe(CellProbeIndex),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellProbeIndex {
    pub(crate) dim: usize,
    pub(crate) centroids: Vec<f32>,
    pub(crate) lists: Vec<Vec<u32>>,
    pub(crate) n_probe: usize,
    pub(crate) iterations: usize,
    pub(crate) max_train: Option<usize>,
}

impl CellProbeIndex {
    pub fn n_cells(&self) -> usize {
        self.lists.len()
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    /// Cell ids ordered by centroid distance to `q` (ties: lower id first).
    fn probe_order(&self, q: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, centroid)| (squared_l2(q, centroid), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub(crate) fn from_assignments(
        dim: usize,
        centroids: Vec<f32>,
        assignments: &[u32],
        n_probe: usize,
        iterations: usize,
        max_train: Option<usize>,
    ) -> Option<Self> {
        let n_cells = centroids.len() / dim.max(1);
        let mut lists = vec![Vec::new(); n_cells];
        for (i, &c) in assignments.iter().enumerate() {
            lists.get_mut(c as usize)?.push(i as u32);
        }
        Some(Self {
            dim,
            centroids,
            lists,
            n_probe,
            iterations,
            max_train,
        })
    }

    pub(crate) fn assignments(&self, n: usize) -> Vec<u32> {
        let mut out = vec![0u32; n];
        for (c, list) in self.lists.iter().enumerate() {
            for &i in list {
                out[i as usize] = c as u32;
            }
        }
        out
    }
}

/// Squared Euclidean distance with 64-bit accumulation.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Heap item ordered by (distance, entry index); the heap root is the
/// current worst candidate.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

/// Bounded top-k selector with deterministic tie-breaking.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, distance: f64, index: u32) {
        let c = Candidate { distance, index };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<(u32, f64)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.distance))
            .collect()
    }
}

pub(crate) fn exact_search(
    keys: &[f32],
    dim: usize,
    q: &[f32],
    k: usize,
    allow: &dyn Fn(usize) -> bool,
) -> Vec<(u32, f64)> {
    let mut top = TopK::new(k);
    for (i, key) in keys.chunks_exact(dim).enumerate() {
        if allow(i) {
            top.push(squared_l2(q, key), i as u32);
        }
    }
    top.into_sorted()
}

pub(crate) fn cell_probe_search(
    index: &CellProbeIndex,
    keys: &[f32],
    q: &[f32],
    k: usize,
    allow: &dyn Fn(usize) -> bool,
) -> Vec<(u32, f64)> {
    let dim = index.dim;
    let mut top = TopK::new(k);
    let mut seen = 0usize;
    for (probed, cell) in index.probe_order(q).into_iter().enumerate() {
        // keep probing past n_probe until k candidates have been seen
        if probed >= index.n_probe && seen >= k {
            break;
        }
        for &i in &index.lists[cell] {
            let i = i as usize;
            if allow(i) {
                top.push(squared_l2(q, &keys[i * dim..(i + 1) * dim]), i as u32);
                seen += 1;
            }
        }
    }
    top.into_sorted()
}

fn nearest_centroid(v: &[f32], centroids: &[f32], dim: usize) -> u32 {
    let mut best = (f64::INFINITY, 0u32);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_l2(v, centroid);
        if d < best.0 {
            best = (d, c as u32);
        }
    }
    best.1
}

/// Trains cell centroids and assigns every key to its nearest cell.
///
/// Seeding takes the first `n_cells` distinct training vectors in store
/// order; fewer distinct vectors yield fewer cells. Empty cells keep their
/// previous centroid.
pub(crate) fn build_cell_probe(
    keys: &[f32],
    dim: usize,
    n_cells: usize,
    n_probe: usize,
    iterations: usize,
    max_train: Option<usize>,
) -> CellProbeIndex {
    use rayon::prelude::*;

    let n = keys.len() / dim;
    let stride = match max_train {
        Some(m) if m > 0 && m < n => n.div_ceil(m),
        _ => 1,
    };
    let train: Vec<&[f32]> = keys.chunks_exact(dim).step_by(stride).collect();

    let mut centroids: Vec<f32> = Vec::with_capacity(n_cells * dim);
    let mut seeded = std::collections::HashSet::new();
    for v in &train {
        if centroids.len() / dim >= n_cells {
            break;
        }
        let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
        if seeded.insert(bits) {
            centroids.extend_from_slice(v);
        }
    }
    let cells = centroids.len() / dim;

    for _ in 0..iterations {
        let assign: Vec<u32> = train
            .par_iter()
            .map(|v| nearest_centroid(v, &centroids, dim))
            .collect();
        let mut sums = vec![0f64; cells * dim];
        let mut counts = vec![0usize; cells];
        for (v, &c) in train.iter().zip(&assign) {
            let c = c as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(v.iter()) {
                *s += x as f64;
            }
        }
        for c in 0..cells {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }
    }

    let assignments: Vec<u32> = keys
        .par_chunks_exact(dim)
        .map(|v| nearest_centroid(v, &centroids, dim))
        .collect();
    CellProbeIndex::from_assignments(dim, centroids, &assignments, n_probe.max(1), iterations, max_train)
        .expect("assignments index existing cells")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_by_index() {
        let mut t = TopK::new(2);
        t.push(1.0, 5);
        t.push(1.0, 3);
        t.push(1.0, 4);
        t.push(2.0, 0);
        assert_eq!(t.into_sorted(), vec![(3, 1.0), (4, 1.0)]);
    }

    #[test]
    fn seeding_skips_duplicate_vectors() {
        let keys = [0.0f32, 0.0, 0.0, 0.0, 1.0, 1.0, 5.0, 5.0];
        let idx = build_cell_probe(&keys, 2, 2, 1, 0, None);
        assert_eq!(idx.centroids(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(idx.cell_sizes(), vec![2, 2]);
    }

    #[test]
    fn fewer_distinct_vectors_than_cells() {
        let keys = [1.0f32, 1.0, 1.0, 1.0];
        let idx = build_cell_probe(&keys, 2, 8, 3, 10, None);
        assert_eq!(idx.n_cells(), 1);
    }
}
