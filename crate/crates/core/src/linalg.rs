//! Small dense linear algebra: one-sided Jacobi SVD and the orthogonal
//! Procrustes solution built on it. Matrices are square, row-major, f64.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Singular value decomposition `a = u · diag(s) · vᵀ` of an `n × n`
/// matrix. `u` and `v` are orthogonal even when `a` is rank deficient.
pub struct Svd {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn svd(a: &[f64], n: usize) -> Result<Svd> {
    assert_eq!(a.len(), n * n);
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| a[i * n + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = 1e-15;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..n {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= eps * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNotConverged);
    }

    let mut s = vec![0.0; n];
    let scale = cols
        .iter()
        .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum::<f64>()))
        .fold(0.0f64, f64::max);
    let tiny = scale * 1e-12;
    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for (j, c) in cols.iter().enumerate() {
        let norm = libm::sqrt(c.iter().map(|x| x * x).sum::<f64>());
        s[j] = norm;
        if norm > tiny && norm > 0.0 {
            ucols.push(Some(c.iter().map(|x| x / norm).collect()));
        } else {
            ucols.push(None);
        }
    }
    let ucols = complete_basis(ucols, n);

    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            u[i * n + j] = ucols[j][i];
            v[i * n + j] = vcols[j][i];
        }
    }
    Ok(Svd { u, s, v })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills missing columns with unit vectors orthogonal to all others.
fn complete_basis(cols: Vec<Option<Vec<f64>>>, n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut fill = Vec::new();
    let mut candidate = 0;
    while basis.len() < n {
        let mut e = vec![0.0; n];
        e[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = b.iter().zip(&e).map(|(x, y)| x * y).sum();
                for (x, y) in e.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = libm::sqrt(e.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-6 {
            e.iter_mut().for_each(|x| *x /= norm);
            basis.push(e.clone());
            fill.push(e);
        }
    }
    let mut fill = fill.into_iter();
    cols.into_iter()
        .map(|c| c.unwrap_or_else(|| fill.next().expect("basis completed")))
        .collect()
}

/// Orthogonal `r` minimizing `Σ‖r·xᵢ − yᵢ‖²`, given the cross-covariance
/// `m = Σ yᵢ·xᵢᵀ`. The solution is `u·vᵀ` where `m = u·s·vᵀ`.
pub fn procrustes(cross: &[f64], n: usize) -> Result<Vec<f64>> {
    let Svd { u, v, .. } = svd(cross, n)?;
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += u[i * n + k] * v[j * n + k];
            }
            r[i * n + j] = acc;
        }
    }
    Ok(r)
}

/// `out = r · x` for a row-major `n × n` matrix.
#[inline]
pub fn mat_vec(r: &[f32], x: &[f32], out: &mut [f32]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &r[i * n..(i + 1) * n];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out = rᵀ · x` for a row-major `n × n` matrix.
#[inline]
pub fn mat_t_vec(r: &[f32], x: &[f32], out: &mut [f32]) {
    let n = x.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &r[i * n..(i + 1) * n];
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * xi;
        }
    }
}

/// `max |rᵀ·r − I|` over all entries.
pub fn orthonormality_error(r: &[f32], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0f64;
            for k in 0..n {
                acc += r[k * n + i] as f64 * r[k * n + j] as f64;
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn reconstruct(s: &Svd, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| s.u[i * n + k] * s.s[k] * s.v[j * n + k]).sum();
            }
        }
        out
    }

    fn max_orth_err(m: &[f64], n: usize) -> f64 {
        let f: Vec<f32> = m.iter().map(|&x| x as f32).collect();
        orthonormality_error(&f, n)
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let n = 12;
        let a = random(n, 1);
        let s = svd(&a, n).unwrap();
        let back = reconstruct(&s, n);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(max_orth_err(&s.u, n) < 1e-5);
        assert!(max_orth_err(&s.v, n) < 1e-5);
    }

    #[test]
    fn svd_of_rank_deficient_matrix_has_orthogonal_factors() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        // rank one: outer product
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (i + 1) as f64 * (j as f64 - 2.0);
            }
        }
        let s = svd(&a, n).unwrap();
        assert!(max_orth_err(&s.u, n) < 1e-5);
        let back = reconstruct(&s, n);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn procrustes_recovers_a_known_rotation() {
        let n = 5;
        let q = svd(&random(n, 7), n).unwrap().u;
        let qf: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cross = vec![0.0; n * n];
        for _ in 0..50 {
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; n];
            mat_vec(&qf, &x, &mut y);
            for i in 0..n {
                for j in 0..n {
                    cross[i * n + j] += y[i] as f64 * x[j] as f64;
                }
            }
        }
        let r = procrustes(&cross, n).unwrap();
        for (a, b) in r.iter().zip(&q) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn transpose_product_inverts_rotation() {
        let n = 4;
        let q: Vec<f32> = svd(&random(n, 2), n).unwrap().u.iter().map(|&x| x as f32).collect();
        let x = [1.0f32, -2.0, 0.5, 3.0];
        let mut y = [0.0; 4];
        let mut back = [0.0; 4];
        mat_vec(&q, &x, &mut y);
        mat_t_vec(&q, &y, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
