//! Lloyd k-means with k-means++ seeding, and a same-size variant that
//! partitions points into groups of identical cardinality.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::{l2_sq, nearest};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::pq::Codebook;

/// Training parameters shared by all quantizer trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub kmeans_iters: usize,
    /// Alternations of the rotation and codebook steps. Zero disables the
    /// rotation entirely.
    pub opq_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kmeans_iters: 25,
            opq_iters: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.kmeans_iters == 0 {
            return Err(Error::invalid("kmeans_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub codebook: Codebook,
    /// Nearest centroid of every input point under the returned codebook.
    pub assignments: Vec<u32>,
    /// Lloyd iterations actually run (stops early once assignments settle).
    pub iterations: usize,
}

impl KMeans {
    /// Mean squared quantization error of the training points.
    pub fn mean_error(&self, points: &DenseMatrix) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let total: f64 = points
            .rows()
            .zip(&self.assignments)
            .map(|(x, &a)| l2_sq(x, self.codebook.centroid(a as usize)) as f64)
            .sum();
        total / points.n() as f64
    }
}

pub fn kmeans(points: &DenseMatrix, k: usize, cfg: &TrainConfig) -> Result<KMeans> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.n() < k {
        return Err(Error::InsufficientData {
            needed: k,
            available: points.n(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let (mut assign, mut dist) = assign_all(points, &centroids, k);
    let mut iterations = 0;
    for _ in 0..cfg.kmeans_iters {
        iterations += 1;
        update_centroids(points, &mut centroids, k, &mut assign, &mut dist);
        let (next, next_dist) = assign_all(points, &centroids, k);
        let settled = next == assign;
        assign = next;
        dist = next_dist;
        if settled {
            break;
        }
    }
    Ok(KMeans {
        codebook: Codebook::new(k, points.d(), centroids)?,
        assignments: assign,
        iterations,
    })
}

/// Runs `iters` Lloyd iterations starting from the given centroids, which
/// are updated in place. Returns the assignments matching the final
/// centroids. Never increases the quantization error.
pub(crate) fn refine(points: &DenseMatrix, centroids: &mut [f32], k: usize, iters: usize) -> Vec<u32> {
    let (mut assign, mut dist) = assign_all(points, centroids, k);
    for _ in 0..iters {
        update_centroids(points, centroids, k, &mut assign, &mut dist);
        let (next, next_dist) = assign_all(points, centroids, k);
        let settled = next == assign;
        assign = next;
        dist = next_dist;
        if settled {
            break;
        }
    }
    assign
}

fn kmeans_pp(points: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.n();
    let d = points.d();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .map(|x| l2_sq(x, points.row(first)) as f64)
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // rounding can run past the end; fall back to the last weighted point
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point coincides with a chosen centroid
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = points.row(pick);
        centroids.extend_from_slice(c);
        for (w, x) in d2.iter_mut().zip(points.rows()) {
            let nd = l2_sq(x, c) as f64;
            if nd < *w {
                *w = nd;
            }
        }
    }
    centroids
}

fn assign_all(points: &DenseMatrix, centroids: &[f32], _k: usize) -> (Vec<u32>, Vec<f32>) {
    let d = points.d();
    let mut assign = Vec::with_capacity(points.n());
    let mut dist = Vec::with_capacity(points.n());
    for x in points.rows() {
        let (i, dd) = nearest(x, centroids, d);
        assign.push(i as u32);
        dist.push(dd);
    }
    (assign, dist)
}

/// Recomputes means. An empty cluster is re-seeded at the point farthest
/// from its current centroid, which then moves to the re-seeded cluster.
fn update_centroids(
    points: &DenseMatrix,
    centroids: &mut [f32],
    k: usize,
    assign: &mut [u32],
    dist: &mut [f32],
) {
    let d = points.d();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.rows().zip(assign.iter()) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(x) {
            *s += v as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, &s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
            *dst = (s * inv) as f32;
        }
    }
    for c in 0..k {
        if counts[c] != 0 {
            continue;
        }
        let far = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty point set");
        centroids[c * d..(c + 1) * d].copy_from_slice(points.row(far));
        counts[assign[far] as usize] -= 1;
        counts[c] = 1;
        assign[far] = c as u32;
        dist[far] = -1.0;
    }
}

/// Result of [`same_size_kmeans`].
#[derive(Debug, Clone)]
pub struct Partition {
    /// Centroid `l` is the mean of `groups[l]`.
    pub codebook: Codebook,
    /// Point indices of every group, ascending.
    pub groups: Vec<Vec<u32>>,
}

/// Partitions the points into `k` groups of exactly `n / k` members.
///
/// Plain k-means runs first. Oversized clusters are then drained greedily:
/// the move with the smallest distance increase from an oversized cluster
/// into a still undersized one is applied first, until all sizes agree.
/// Group centroids are finally recomputed as member means.
pub fn same_size_kmeans(points: &DenseMatrix, k: usize, cfg: &TrainConfig) -> Result<Partition> {
    if k == 0 || points.n() % k != 0 {
        return Err(Error::invalid("point count must be a positive multiple of k"));
    }
    let km = kmeans(points, k, cfg)?;
    let size = points.n() / k;
    let d = points.d();
    let centroids = km.codebook.as_slice();
    let mut assign = km.assignments;
    let mut counts = vec![0usize; k];
    for &a in &assign {
        counts[a as usize] += 1;
    }

    #[derive(PartialEq)]
    struct Move(f64, u32, u32);
    impl Eq for Move {}
    impl PartialOrd for Move {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Move {
        fn cmp(&self, other: &Self) -> Ordering {
            self.0
                .total_cmp(&other.0)
                .then(self.1.cmp(&other.1))
                .then(self.2.cmp(&other.2))
        }
    }

    let original = assign.clone();
    let assign_of = |p: usize| original[p] as usize;
    let best_target = |p: usize, counts: &[usize]| -> Option<Move> {
        let x = points.row(p);
        let own = l2_sq(x, &centroids[assign_of(p) * d..(assign_of(p) + 1) * d]) as f64;
        (0..k)
            .filter(|&t| counts[t] < size)
            .map(|t| Move(l2_sq(x, &centroids[t * d..(t + 1) * d]) as f64 - own, p as u32, t as u32))
            .min()
    };
    let mut heap = BinaryHeap::new();
    for p in 0..points.n() {
        if counts[assign_of(p)] > size {
            if let Some(mv) = best_target(p, &counts) {
                heap.push(Reverse(mv));
            }
        }
    }
    while let Some(Reverse(Move(_, p, t))) = heap.pop() {
        let (p, t) = (p as usize, t as usize);
        let src = assign_of(p);
        if counts[src] <= size {
            continue;
        }
        if counts[t] >= size {
            if let Some(mv) = best_target(p, &counts) {
                heap.push(Reverse(mv));
            }
            continue;
        }
        counts[src] -= 1;
        counts[t] += 1;
        assign[p] = t as u32;
    }
    debug_assert!(counts.iter().all(|&c| c == size));

    let mut groups = vec![Vec::with_capacity(size); k];
    for (p, &a) in assign.iter().enumerate() {
        groups[a as usize].push(p as u32);
    }
    let mut means = vec![0.0f32; k * d];
    for (l, g) in groups.iter().enumerate() {
        let mut acc = vec![0.0f64; d];
        for &p in g {
            for (s, &v) in acc.iter_mut().zip(points.row(p as usize)) {
                *s += v as f64;
            }
        }
        for (dst, s) in means[l * d..(l + 1) * d].iter_mut().zip(acc) {
            *dst = (s / g.len() as f64) as f32;
        }
    }
    Ok(Partition {
        codebook: Codebook::new(k, d, means)?,
        groups,
    })
}
