//! Exact neighbors parallelized over queries.

use pqscan_core::eval::{knn_one, GroundTruth};
use pqscan_core::{DenseMatrix, Error as CoreError};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f` on a pool of `threads` workers (0 picks the rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::usage(e.to_string()))?;
    Ok(pool.install(f))
}

/// Same output as [`pqscan_core::eval::exact_knn`] for any thread count.
pub fn exact_knn_parallel(base: &DenseMatrix, queries: &DenseMatrix, k: usize, threads: usize) -> Result<GroundTruth> {
    if k > base.n() {
        return Err(CoreError::InsufficientData {
            needed: k,
            available: base.n(),
        }
        .into());
    }
    if !queries.is_empty() && base.d() != queries.d() {
        return Err(CoreError::DimensionMismatch {
            expected: base.d(),
            found: queries.d(),
        }
        .into());
    }
    let rows: Vec<&[f32]> = queries.rows().collect();
    let per_query: Vec<_> = with_threads(threads, || rows.par_iter().map(|q| knn_one(base, q, k)).collect())?;
    let ids = per_query.iter().flatten().map(|n| n.id).collect();
    let distances = per_query.iter().flatten().map(|n| n.distance).collect();
    Ok(GroundTruth::new(k, ids, distances)?)
}
