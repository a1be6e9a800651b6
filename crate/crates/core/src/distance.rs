//! Squared Euclidean distance. No square roots are taken anywhere in the
//! crate; every reported distance is squared.

/// Squared L2 distance. Accumulates in eight interleaved lanes so the
/// compiler vectorizes it; the summation order is fixed, so results are
/// reproducible across calls.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            let t = xa[l] - xb[l];
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        let t = a[i] - b[i];
        tail += t * t;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Index of the nearest row of `centroids` (row-major, `dim` wide) to `x`.
/// Ties go to the lowest index.
#[inline]
pub fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum() {
        let a: alloc::vec::Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let b: alloc::vec::Vec<f32> = (0..19).map(|i| (i * i) as f32 * 0.1).collect();
        let naive: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum();
        assert!((l2_sq(&a, &b) as f64 - naive).abs() <= 1e-4 * naive);
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let cents = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        assert_eq!(nearest(&[0.0, 0.0], &cents, 2).0, 0);
        assert_eq!(nearest(&[-1.0, 0.0], &cents, 2).0, 1);
    }
}
