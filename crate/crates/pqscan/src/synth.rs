//! SIFT-like synthetic data: Gaussian blobs (deviation 20 per axis) around
//! random centers in `[0, 255]^d`.

use pqscan_core::{DenseMatrix, Error as CoreError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

pub const DEVIATION: f32 = 20.0;

fn centers(d: usize, clusters: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..clusters * d).map(|_| rng.random_range(0.0..=255.0f32)).collect()
}

fn draw(n: usize, d: usize, clusters: usize, centers: &[f32], rng: &mut ChaCha8Rng) -> DenseMatrix {
    let noise = Normal::new(0.0f32, DEVIATION).expect("positive deviation");
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        data.extend(centers[c * d..(c + 1) * d].iter().map(|&v| v + noise.sample(rng)));
    }
    if n == 0 {
        return DenseMatrix::empty(d);
    }
    DenseMatrix::new(n, d, data).expect("sizes match")
}

fn check(d: usize, clusters: usize) -> Result<()> {
    if d == 0 || clusters == 0 {
        return Err(CoreError::InvalidParameter("d and clusters must be positive".into()).into());
    }
    Ok(())
}

/// `n` rows drawn from `clusters` blobs; deterministic for a given seed.
pub fn generate_synthetic(n: usize, d: usize, clusters: usize, seed: u64) -> Result<DenseMatrix> {
    check(d, clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = centers(d, clusters, &mut rng);
    Ok(draw(n, d, clusters, &c, &mut rng))
}

/// Base and query sets drawn from the same blobs. The base equals
/// `generate_synthetic(n, d, clusters, seed)`.
pub fn generate_split(n: usize, queries: usize, d: usize, clusters: usize, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
    check(d, clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = centers(d, clusters, &mut rng);
    let base = draw(n, d, clusters, &c, &mut rng);
    let mut qrng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok((base, draw(queries, d, clusters, &c, &mut qrng)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate_synthetic(100, 8, 1, 7).unwrap();
        assert_eq!(a, generate_synthetic(100, 8, 1, 7).unwrap());
        assert_ne!(a, generate_synthetic(100, 8, 1, 8).unwrap());
    }

    #[test]
    fn empty_and_invalid() {
        assert_eq!(generate_synthetic(0, 8, 3, 1).unwrap().n(), 0);
        assert!(generate_synthetic(10, 0, 3, 1).is_err());
        assert!(generate_synthetic(10, 4, 0, 1).is_err());
    }

    #[test]
    fn split_shares_base() {
        let (b, q) = generate_split(50, 10, 4, 3, 9).unwrap();
        assert_eq!(b, generate_synthetic(50, 4, 3, 9).unwrap());
        assert_eq!(q.n(), 10);
    }

    #[test]
    fn single_blob_statistics() {
        let m = generate_synthetic(20000, 2, 1, 3).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = m.rows().map(|r| r[c] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((var.sqrt() - 20.0).abs() < 0.5, "{}", var.sqrt());
            assert!((0.0..=255.0).contains(&mean));
        }
    }
}
