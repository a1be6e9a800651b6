//! Brute-force nearest neighbors and Recall@R.

use alloc::vec::Vec;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::matrix::{DenseMatrix, IntMatrix};

/// Per-query true nearest neighbors in ascending distance order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    k: usize,
    ids: Vec<u32>,
    distances: Vec<f32>,
}

impl GroundTruth {
    pub fn new(k: usize, ids: Vec<u32>, distances: Vec<f32>) -> Result<Self> {
        if ids.len() != distances.len() || (k > 0 && ids.len() % k != 0) {
            return Err(Error::invalid("ground truth arrays have inconsistent lengths"));
        }
        Ok(Self { k, ids, distances })
    }

    /// Ground truth loaded from an ivecs file, which carries no distances.
    pub fn from_ids(ids: &IntMatrix) -> Result<Self> {
        let mut out = Vec::with_capacity(ids.as_slice().len());
        for &v in ids.as_slice() {
            let id = u32::try_from(v).map_err(|_| Error::invalid("negative neighbor id"))?;
            out.push(id);
        }
        let len = out.len();
        Self::new(ids.k(), out, alloc::vec![f32::NAN; len])
    }

    pub fn num_queries(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.ids.len() / self.k
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self, query: usize) -> &[u32] {
        &self.ids[query * self.k..(query + 1) * self.k]
    }

    pub fn distances(&self, query: usize) -> &[f32] {
        &self.distances[query * self.k..(query + 1) * self.k]
    }

    pub fn to_int_matrix(&self) -> IntMatrix {
        let data = self.ids.iter().map(|&i| i as i32).collect();
        IntMatrix::new(self.num_queries(), self.k, data).expect("consistent shape")
    }
}

/// Exact k nearest neighbors of each query by squared Euclidean distance.
/// Equal distances are ordered by ascending id.
pub fn exact_knn(base: &DenseMatrix, queries: &DenseMatrix, k: usize) -> Result<GroundTruth> {
    if k > base.n() {
        return Err(Error::InsufficientData {
            needed: k,
            available: base.n(),
        });
    }
    if !queries.is_empty() && base.d() != queries.d() {
        return Err(Error::DimensionMismatch {
            expected: base.d(),
            found: queries.d(),
        });
    }
    let mut ids = Vec::with_capacity(queries.n() * k);
    let mut distances = Vec::with_capacity(queries.n() * k);
    for q in queries.rows() {
        for n in knn_one(base, q, k) {
            ids.push(n.id);
            distances.push(n.distance);
        }
    }
    GroundTruth::new(k, ids, distances)
}

/// Exact neighbors of a single query; the building block of [`exact_knn`],
/// exposed so callers can parallelize over queries.
pub fn knn_one(base: &DenseMatrix, query: &[f32], k: usize) -> Vec<crate::heap::Neighbor> {
    if k == 0 {
        return Vec::new();
    }
    let mut set = NeighborSet::new(k);
    for (i, row) in base.rows().enumerate() {
        let d = l2_sq(row, query);
        if let Some(t) = set.threshold() {
            if d > t {
                continue;
            }
        }
        set.add(i as u32, d);
    }
    set.into_sorted()
}

/// Fraction of queries whose true nearest neighbor appears among the first
/// `r` returned ids.
pub fn recall_at_r<R: AsRef<[u32]>>(results: &[R], truth: &GroundTruth, r: usize) -> Result<f64> {
    if results.len() != truth.num_queries() {
        return Err(Error::DimensionMismatch {
            expected: truth.num_queries(),
            found: results.len(),
        });
    }
    if truth.k() == 0 {
        return Err(Error::Empty("ground truth has no neighbors"));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let hits = results
        .iter()
        .enumerate()
        .filter(|(q, res)| {
            let nn = truth.ids(*q)[0];
            let res = res.as_ref();
            res[..r.min(res.len())].contains(&nn)
        })
        .count();
    Ok(hits as f64 / results.len() as f64)
}
