//! Vector and product quantizers, with an optional learned rotation (OPQ).

use alloc::vec;
use alloc::vec::Vec;

use crate::codes::{CodeList, CodeWidth};
use crate::distance::{l2_sq, nearest};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, refine};
pub use crate::kmeans::TrainConfig;
use crate::linalg::{mat_t_vec, mat_vec, procrustes};
use crate::matrix::DenseMatrix;

/// `k` centroids of dimensionality `dsub`; centroid `i` is row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dsub: usize,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, dsub: usize, centroids: Vec<f32>) -> Result<Self> {
        if k == 0 || dsub == 0 {
            return Err(Error::invalid("codebook needs at least one centroid of positive size"));
        }
        if centroids.len() != k * dsub {
            return Err(Error::DimensionMismatch {
                expected: k * dsub,
                found: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook entries must be finite"));
        }
        Ok(Self { k, dsub, centroids })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn dsub(&self) -> usize {
        self.dsub
    }

    #[inline]
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dsub..(i + 1) * self.dsub]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.centroids
    }

    /// Nearest centroid, ties to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f32]) -> (usize, f32) {
        nearest(x, &self.centroids, self.dsub)
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::new(self.k, self.dsub, self.centroids.clone()).expect("consistent shape")
    }

    /// Codebook whose centroid `i` is this codebook's centroid `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: order.len(),
            });
        }
        let mut seen = vec![false; self.k];
        let mut data = Vec::with_capacity(self.centroids.len());
        for &o in order {
            if o >= self.k || core::mem::replace(&mut seen[o], true) {
                return Err(Error::invalid("centroid order is not a permutation"));
            }
            data.extend_from_slice(self.centroid(o));
        }
        Self::new(self.k, self.dsub, data)
    }
}

/// Sub-indexes of one encoded vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Code(pub Vec<u16>);

impl Code {
    pub fn as_slice(&self) -> &[u16] {
        &self.0
    }
}

/// `m` sub-quantizers with `2^b` centroids each, over `d = m · dsub`
/// dimensions, optionally preceded by an orthonormal rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQuantizer {
    m: usize,
    b: u32,
    d: usize,
    codebooks: Vec<Codebook>,
    rotation: Option<Vec<f32>>,
}

impl ProductQuantizer {
    pub fn new(b: u32, codebooks: Vec<Codebook>, rotation: Option<Vec<f32>>) -> Result<Self> {
        CodeWidth::for_bits(b)?;
        let m = codebooks.len();
        if m == 0 {
            return Err(Error::invalid("at least one sub-quantizer is required"));
        }
        let dsub = codebooks[0].dsub();
        for cb in &codebooks {
            if cb.k() != 1 << b {
                return Err(Error::DimensionMismatch {
                    expected: 1 << b,
                    found: cb.k(),
                });
            }
            if cb.dsub() != dsub {
                return Err(Error::DimensionMismatch {
                    expected: dsub,
                    found: cb.dsub(),
                });
            }
        }
        let d = m * dsub;
        if let Some(r) = &rotation {
            if r.len() != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d * d,
                    found: r.len(),
                });
            }
        }
        Ok(Self {
            m,
            b,
            d,
            codebooks,
            rotation,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn b(&self) -> u32 {
        self.b
    }

    #[inline]
    pub fn k(&self) -> usize {
        1 << self.b
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn dsub(&self) -> usize {
        self.d / self.m
    }

    pub fn width(&self) -> CodeWidth {
        CodeWidth::for_bits(self.b).expect("validated at construction")
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn codebook(&self, j: usize) -> &Codebook {
        &self.codebooks[j]
    }

    pub fn rotation(&self) -> Option<&[f32]> {
        self.rotation.as_deref()
    }

    /// Code size in bits.
    pub fn code_bits(&self) -> usize {
        self.m * self.b as usize
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: len,
            });
        }
        Ok(())
    }

    /// Applies the rotation, if any, into `out`.
    pub fn rotate_into(&self, x: &[f32], out: &mut [f32]) {
        match &self.rotation {
            Some(r) => mat_vec(r, x, out),
            None => out.copy_from_slice(x),
        }
    }

    pub fn encode(&self, x: &[f32]) -> Result<Code> {
        self.check_dim(x.len())?;
        let mut out = vec![0u16; self.m];
        let mut scratch = vec![0.0f32; self.d];
        self.encode_with(x, &mut scratch, &mut out);
        Ok(Code(out))
    }

    fn encode_with(&self, x: &[f32], scratch: &mut [f32], out: &mut [u16]) {
        let x = match &self.rotation {
            Some(r) => {
                mat_vec(r, x, scratch);
                &*scratch
            }
            None => x,
        };
        let dsub = self.dsub();
        for (j, (o, cb)) in out.iter_mut().zip(&self.codebooks).enumerate() {
            *o = cb.nearest(&x[j * dsub..(j + 1) * dsub]).0 as u16;
        }
    }

    /// Encodes every row into a code list with positional ids.
    pub fn encode_all(&self, data: &DenseMatrix) -> Result<CodeList> {
        if !data.is_empty() {
            self.check_dim(data.d())?;
        }
        let mut list = CodeList::with_capacity(self.m, self.b, data.n())?;
        let mut scratch = vec![0.0f32; self.d];
        let mut code = vec![0u16; self.m];
        for x in data.rows() {
            self.encode_with(x, &mut scratch, &mut code);
            list.push(&code)?;
        }
        Ok(list)
    }

    /// Concatenated centroids, in the rotated space.
    pub fn decode_unrotated(&self, code: &[u16]) -> Result<Vec<f32>> {
        if code.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: code.len(),
            });
        }
        let mut out = Vec::with_capacity(self.d);
        for (&i, cb) in code.iter().zip(&self.codebooks) {
            let i = i as usize;
            if i >= cb.k() {
                return Err(Error::IndexOutOfRange { index: i, bound: cb.k() });
            }
            out.extend_from_slice(cb.centroid(i));
        }
        Ok(out)
    }

    pub fn decode(&self, code: &[u16]) -> Result<Vec<f32>> {
        let y = self.decode_unrotated(code)?;
        Ok(match &self.rotation {
            Some(r) => {
                let mut out = vec![0.0; self.d];
                mat_t_vec(r, &y, &mut out);
                out
            }
            None => y,
        })
    }

    /// Mean squared reconstruction error over `data`.
    pub fn reconstruction_error(&self, data: &DenseMatrix) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        self.check_dim(data.d())?;
        let mut scratch = vec![0.0f32; self.d];
        let mut code = vec![0u16; self.m];
        let mut total = 0.0f64;
        for x in data.rows() {
            self.encode_with(x, &mut scratch, &mut code);
            let y = self.decode(&code)?;
            total += l2_sq(x, &y) as f64;
        }
        Ok(total / data.n() as f64)
    }

    /// Same quantizer with codebook `j` replaced.
    pub fn with_codebook(&self, j: usize, cb: Codebook) -> Result<Self> {
        let mut books = self.codebooks.clone();
        books[j] = cb;
        Self::new(self.b, books, self.rotation.clone())
    }
}

fn validate_training(training: &DenseMatrix, m: usize, b: u32) -> Result<()> {
    CodeWidth::for_bits(b)?;
    if m == 0 || training.d() == 0 || training.d() % m != 0 {
        return Err(Error::invalid("dimensionality must be a positive multiple of m"));
    }
    if training.n() < 1 << b {
        return Err(Error::InsufficientData {
            needed: 1 << b,
            available: training.n(),
        });
    }
    Ok(())
}

/// Trains one k-means codebook per sub-space.
pub fn train_pq(training: &DenseMatrix, m: usize, b: u32, cfg: &TrainConfig) -> Result<ProductQuantizer> {
    validate_training(training, m, b)?;
    let dsub = training.d() / m;
    let mut books = Vec::with_capacity(m);
    for j in 0..m {
        let sub = training.column_block(j * dsub, dsub);
        let sub_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(j as u64),
            ..*cfg
        };
        books.push(kmeans(&sub, 1 << b, &sub_cfg)?.codebook);
    }
    ProductQuantizer::new(b, books, None)
}

pub fn train_opq(training: &DenseMatrix, m: usize, b: u32, cfg: &TrainConfig) -> Result<ProductQuantizer> {
    train_opq_with_history(training, m, b, cfg).map(|(pq, _)| pq)
}

/// Optimized product quantization, by alternating a codebook step (one
/// warm-started Lloyd iteration per sub-space in the rotated space) and a
/// rotation step (orthogonal Procrustes between the data and its current
/// reconstruction). Starts from the plain product quantizer, so the error
/// history begins with its error and never increases.
///
/// Returns the quantizer and the mean squared training error after the
/// initial quantizer and after every alternation.
pub fn train_opq_with_history(
    training: &DenseMatrix,
    m: usize,
    b: u32,
    cfg: &TrainConfig,
) -> Result<(ProductQuantizer, Vec<f64>)> {
    let pq = train_pq(training, m, b, cfg)?;
    let initial = pq.reconstruction_error(training)?;
    if cfg.opq_iters == 0 {
        return Ok((pq, vec![initial]));
    }
    let n = training.n();
    let d = training.d();
    let dsub = d / m;
    let k = 1usize << b;
    let mut books: Vec<Vec<f32>> = pq.codebooks.iter().map(|c| c.as_slice().to_vec()).collect();
    let mut codes: Vec<Vec<u32>> = (0..m)
        .map(|j| {
            let sub = training.column_block(j * dsub, dsub);
            sub.rows().map(|x| nearest(x, &books[j], dsub).0 as u32).collect()
        })
        .collect();
    let mut rotation = vec![0.0f32; d * d];
    for i in 0..d {
        rotation[i * d + i] = 1.0;
    }
    let mut history = vec![initial];
    let mut recon = vec![0.0f32; d];
    let mut rotated = DenseMatrix::zeros(n, d);
    for _ in 0..cfg.opq_iters {
        // rotation step
        let mut cross = vec![0.0f64; d * d];
        for (i, x) in training.rows().enumerate() {
            for j in 0..m {
                let c = codes[j][i] as usize;
                recon[j * dsub..(j + 1) * dsub].copy_from_slice(&books[j][c * dsub..(c + 1) * dsub]);
            }
            for (a, &ya) in recon.iter().enumerate() {
                if ya == 0.0 {
                    continue;
                }
                let ya = ya as f64;
                let row = &mut cross[a * d..(a + 1) * d];
                for (dst, &xb) in row.iter_mut().zip(x) {
                    *dst += ya * xb as f64;
                }
            }
        }
        let r = procrustes(&cross, d)?;
        rotation.iter_mut().zip(&r).for_each(|(dst, &v)| *dst = v as f32);
        for (i, x) in training.rows().enumerate() {
            mat_vec(&rotation, x, rotated.row_mut(i));
        }
        // codebook step
        let mut total = 0.0f64;
        for j in 0..m {
            let sub = rotated.column_block(j * dsub, dsub);
            codes[j] = refine(&sub, &mut books[j], k, 1);
            total += sub
                .rows()
                .zip(&codes[j])
                .map(|(x, &c)| l2_sq(x, &books[j][c as usize * dsub..(c as usize + 1) * dsub]) as f64)
                .sum::<f64>();
        }
        history.push(total / n as f64);
    }
    let codebooks = books
        .into_iter()
        .map(|c| Codebook::new(k, dsub, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((ProductQuantizer::new(b, codebooks, Some(rotation))?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(0.0..10.0f32)).collect();
        DenseMatrix::new(n, d, data).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            kmeans_iters: 8,
            opq_iters: 6,
            seed: 1,
        }
    }

    #[test]
    fn shapes_of_common_configurations() {
        let data = uniform(300, 32, 1);
        let pq = train_pq(&data, 8, 8, &TrainConfig { kmeans_iters: 2, ..quick() }).unwrap();
        assert_eq!((pq.m(), pq.k(), pq.dsub(), pq.code_bits()), (8, 256, 4, 64));
        let pq = train_pq(&data, 16, 4, &quick()).unwrap();
        assert_eq!((pq.m(), pq.k(), pq.dsub(), pq.code_bits()), (16, 16, 2, 64));
    }

    #[test]
    fn single_sub_quantizer_is_a_vector_quantizer() {
        let data = uniform(64, 6, 2);
        let pq = train_pq(&data, 1, 4, &quick()).unwrap();
        let vq = kmeans(&data, 16, &quick()).unwrap();
        assert_eq!(pq.codebook(0), &vq.codebook);
    }

    #[test]
    fn rejects_bad_parameters() {
        let data = uniform(20, 6, 3);
        assert!(matches!(train_pq(&data, 2, 8, &quick()), Err(Error::InsufficientData { .. })));
        assert!(train_pq(&data, 4, 4, &quick()).is_err());
        assert!(matches!(train_pq(&data, 2, 5, &quick()), Err(Error::UnsupportedBits(5))));
    }

    fn two_book_pq() -> ProductQuantizer {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let books = (0..2)
            .map(|_| {
                let c = (0..16 * 3).map(|_| rng.random_range(-5.0..5.0f32)).collect();
                Codebook::new(16, 3, c).unwrap()
            })
            .collect();
        ProductQuantizer::new(4, books, None).unwrap()
    }

    #[test]
    fn exact_centroid_concatenation_encodes_to_its_indexes() {
        let pq = two_book_pq();
        let mut x = pq.codebook(0).centroid(3).to_vec();
        x.extend_from_slice(pq.codebook(1).centroid(7));
        assert_eq!(pq.encode(&x).unwrap().0, vec![3, 7]);
        assert_eq!(pq.decode(&[3, 7]).unwrap(), x);
    }

    #[test]
    fn equidistant_sub_vector_takes_lowest_index() {
        let mut c = vec![100.0f32; 16];
        c[2] = 1.0;
        c[9] = -1.0;
        let pq = ProductQuantizer::new(4, vec![Codebook::new(16, 1, c).unwrap()], None).unwrap();
        assert_eq!(pq.encode(&[0.0]).unwrap().0, vec![2]);
    }

    #[test]
    fn encode_matches_brute_force_argmin() {
        let pq = two_book_pq();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(-6.0..6.0f32)).collect();
            let code = pq.encode(&x).unwrap();
            for j in 0..2 {
                let sub = &x[j * 3..j * 3 + 3];
                let best = (0..16)
                    .map(|i| l2_sq(sub, pq.codebook(j).centroid(i)))
                    .fold(f32::INFINITY, f32::min);
                assert_eq!(l2_sq(sub, pq.codebook(j).centroid(code.0[j] as usize)), best);
            }
        }
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let pq = two_book_pq();
        assert!(matches!(pq.decode(&[16, 0]), Err(Error::IndexOutOfRange { .. })));
        assert!(pq.encode(&[0.0; 5]).is_err());
    }

    #[test]
    fn identity_rotation_matches_absent_rotation() {
        let pq = two_book_pq();
        let mut eye = vec![0.0f32; 36];
        for i in 0..6 {
            eye[i * 6 + i] = 1.0;
        }
        let rot = ProductQuantizer::new(4, pq.codebooks().to_vec(), Some(eye)).unwrap();
        let x = [0.3f32, -1.0, 2.0, 4.0, 0.0, -2.5];
        let c = pq.encode(&x).unwrap();
        assert_eq!(c, rot.encode(&x).unwrap());
        assert_eq!(pq.decode(&c.0).unwrap(), rot.decode(&c.0).unwrap());
    }

    #[test]
    fn relabeling_a_codebook_preserves_reconstruction() {
        let pq = two_book_pq();
        let order: Vec<usize> = (0..16).rev().collect();
        let relabeled = pq.with_codebook(0, pq.codebook(0).reordered(&order).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(-6.0..6.0f32)).collect();
            let a = pq.decode(&pq.encode(&x).unwrap().0).unwrap();
            let b = relabeled.decode(&relabeled.encode(&x).unwrap().0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn opq_without_iterations_is_plain_pq() {
        let data = uniform(200, 8, 9);
        let cfg = TrainConfig { opq_iters: 0, ..quick() };
        let opq = train_opq(&data, 2, 4, &cfg).unwrap();
        assert!(opq.rotation().is_none());
        assert_eq!(opq, train_pq(&data, 2, 4, &cfg).unwrap());
    }

    #[test]
    fn opq_error_never_increases_and_rotation_is_orthonormal() {
        let data = uniform(400, 8, 10);
        let (pq, history) = train_opq_with_history(&data, 2, 4, &quick()).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{history:?}");
        }
        assert!(orthonormality_error(pq.rotation().unwrap(), 8) <= 1e-4);
        let final_err = pq.reconstruction_error(&data).unwrap();
        assert!((final_err - history.last().unwrap()).abs() <= 1e-3 * final_err);
    }
}
