//! Local-level decision: a frozen repository of labeled unit embeddings,
//! exact K-nearest-neighbor retrieval and neighbor-label similarity scores.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::global::{class_mean_thresholds, Thresholds};

/// Neighborhood size for corpus-scale repositories.
pub const DEFAULT_K: usize = 300;
/// Neighborhood size for the default synthetic benchmark (~3k records).
pub const BENCHMARK_K: usize = 50;

/// Snapshot of `(id, embedding, label)` rows, rebuilt at epoch boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRepository {
    dim: usize,
    ids: Vec<u64>,
    embeddings: Vec<f64>,
    labels: Vec<usize>,
    epoch_built: usize,
}

/// Neighbors of one query, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub neighbor_ids: Vec<u64>,
    pub distances: Vec<f64>,
    /// Repository row of each neighbor.
    pub(crate) rows: Vec<usize>,
}

impl NeighborRepository {
    /// Rows must carry unique ids; they are stored in ascending id order.
    pub fn build<'a, I>(rows: I, dim: usize, epoch: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, &'a [f64], usize)>,
    {
        let mut rows: Vec<(u64, &[f64], usize)> = rows.into_iter().collect();
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::ConfigInvalid(format!(
                "duplicate repository id {}",
                w[0].0
            )));
        }
        let mut repo = NeighborRepository {
            dim,
            ids: Vec::with_capacity(rows.len()),
            embeddings: Vec::with_capacity(rows.len() * dim),
            labels: Vec::with_capacity(rows.len()),
            epoch_built: epoch,
        };
        for (id, z, label) in rows {
            if z.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: z.len(),
                });
            }
            repo.ids.push(id);
            repo.embeddings.extend_from_slice(z);
            repo.labels.push(label);
        }
        Ok(repo)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn epoch_built(&self) -> usize {
        self.epoch_built
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn label_of(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok().map(|row| self.labels[row])
    }

    /// Exact K nearest rows by Euclidean distance, excluding `query_id`.
    /// Ties break by ascending id.
    pub fn knn(&self, query_id: u64, query: &[f64], k: usize) -> Result<KnnResult> {
        if self.is_empty() {
            return Err(Error::EmptyRepository);
        }
        if k == 0 {
            return Err(Error::ConfigInvalid("K must be >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (row, &id) in self.ids.iter().enumerate() {
            if id == query_id {
                continue;
            }
            let bound = if heap.len() == k {
                heap.peek().map(|c| c.d2)
            } else {
                None
            };
            let Some(d2) = squared_distance_bounded(self.embedding(row), query, bound) else {
                continue;
            };
            let cand = Candidate { d2, id, row };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(cand);
            }
        }
        let sorted = heap.into_sorted_vec();
        Ok(KnnResult {
            neighbor_ids: sorted.iter().map(|c| c.id).collect(),
            distances: sorted.iter().map(|c| c.d2.sqrt()).collect(),
            rows: sorted.iter().map(|c| c.row).collect(),
        })
    }

    /// Fraction of neighbors carrying each class.
    pub fn local_similarity(&self, result: &KnnResult, n_classes: usize) -> Vec<f64> {
        let mut sims = vec![0.0; n_classes];
        if result.rows.is_empty() {
            return sims;
        }
        for &row in &result.rows {
            sims[self.labels[row]] += 1.0;
        }
        let k = result.rows.len() as f64;
        sims.iter_mut().for_each(|s| *s /= k);
        sims
    }

    /// Local similarity for many queries, in input order.
    pub fn local_similarities(
        &self,
        queries: &[(u64, &[f64])],
        k: usize,
        n_classes: usize,
    ) -> Result<Vec<Vec<f64>>> {
        queries
            .par_iter()
            .map(|(id, z)| {
                let res = self.knn(*id, z, k)?;
                Ok(self.local_similarity(&res, n_classes))
            })
            .collect()
    }
}

/// Squared distance, or `None` once the running sum strictly exceeds `bound`.
fn squared_distance_bounded(a: &[f64], b: &[f64], bound: Option<f64>) -> Option<f64> {
    let limit = bound.unwrap_or(f64::INFINITY);
    let mut acc = 0.0;
    for (chunk_a, chunk_b) in a.chunks(8).zip(b.chunks(8)) {
        for (x, y) in chunk_a.iter().zip(chunk_b) {
            let d = x - y;
            acc += d * d;
        }
        if acc > limit {
            return None;
        }
    }
    Some(acc)
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    d2: f64,
    id: u64,
    row: usize,
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
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Per-class thresholds over local similarity scores; same rule and empty
/// class fallback as the global thresholds.
pub fn local_thresholds(
    local_sims: &[Vec<f64>],
    hard_labels: &[usize],
    n_classes: usize,
    epoch: usize,
) -> Thresholds {
    class_mean_thresholds(local_sims, hard_labels, n_classes, epoch)
}
