//! Row-major dense matrices.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `n` rows of `d` single-precision components, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 && n > 0 {
            return Err(Error::invalid("dimensionality must be positive"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: alloc::vec![0.0; n * d],
        }
    }

    /// Matrix without rows. `d` may be zero when it is unknown (empty file).
    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            d,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::empty(0));
        };
        let d = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            d: self.d,
            data,
        }
    }

    /// Columns `start..start + width` of every row.
    pub fn column_block(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.n * width);
        for row in self.rows() {
            data.extend_from_slice(&row[start..start + width]);
        }
        Self {
            n: self.n,
            d: width,
            data,
        }
    }

    pub fn first_rows(&self, count: usize) -> Self {
        let count = count.min(self.n);
        Self {
            n: count,
            d: self.d,
            data: self.data[..count * self.d].to_vec(),
        }
    }
}

/// `n` rows of `k` signed 32-bit integers (ground truth storage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    n: usize,
    k: usize,
    data: Vec<i32>,
}

impl IntMatrix {
    pub fn new(n: usize, k: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != n * k {
            return Err(Error::DimensionMismatch {
                expected: n * k,
                found: data.len(),
            });
        }
        Ok(Self { n, k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }
}
