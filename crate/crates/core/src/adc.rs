//! Lookup tables and the baseline asymmetric distance scan.

use alloc::vec;
use alloc::vec::Vec;

use crate::codes::{CodeList, CodeWidth};
use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::pq::{Codebook, ProductQuantizer};

/// `m` tables of `k` squared sub-distances; entry `(j, i)` is the distance
/// between query sub-vector `j` and centroid `i` of codebook `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTables {
    m: usize,
    k: usize,
    data: Vec<f32>,
}

impl LookupTables {
    pub fn new(m: usize, k: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != m * k {
            return Err(Error::DimensionMismatch {
                expected: m * k,
                found: data.len(),
            });
        }
        Ok(Self { m, k, data })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn table(&self, j: usize) -> &[f32] {
        &self.data[j * self.k..(j + 1) * self.k]
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f32 {
        self.data[j * self.k + i]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Smallest entry over all tables.
    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Footprint in bytes.
    pub fn size_bytes(&self) -> usize {
        self.data.len() * core::mem::size_of::<f32>()
    }

    pub(crate) fn check_list(&self, list_m: usize, b: u32) -> Result<()> {
        if list_m != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: list_m,
            });
        }
        if 1usize << b != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: 1 << b,
            });
        }
        Ok(())
    }
}

/// Tables for query `y`, rotated first when the quantizer carries a rotation.
pub fn compute_tables(pq: &ProductQuantizer, y: &[f32]) -> Result<LookupTables> {
    pq.check_dim(y.len())?;
    let mut rotated = vec![0.0f32; pq.d()];
    pq.rotate_into(y, &mut rotated);
    Ok(tables_for_codebooks(pq.codebooks(), &rotated))
}

/// Tables of an already rotated query against arbitrary per-sub-space
/// codebooks (which must share `k` and `dsub`).
pub fn tables_for_codebooks(codebooks: &[Codebook], y: &[f32]) -> LookupTables {
    let k = codebooks[0].k();
    let dsub = codebooks[0].dsub();
    let mut data = Vec::with_capacity(codebooks.len() * k);
    for (j, cb) in codebooks.iter().enumerate() {
        let sub = &y[j * dsub..(j + 1) * dsub];
        data.extend(cb.as_slice().chunks_exact(dsub).map(|c| l2_sq(sub, c)));
    }
    LookupTables {
        m: codebooks.len(),
        k,
        data,
    }
}

/// Sum of table entries selected by the code, accumulated for `j = 0..m`.
pub fn adc_distance(tables: &LookupTables, code: &[u16]) -> Result<f32> {
    if code.len() != tables.m {
        return Err(Error::DimensionMismatch {
            expected: tables.m,
            found: code.len(),
        });
    }
    let mut d = 0.0f32;
    for (j, &c) in code.iter().enumerate() {
        let c = c as usize;
        if c >= tables.k {
            return Err(Error::IndexOutOfRange { index: c, bound: tables.k });
        }
        d += tables.data[j * tables.k + c];
    }
    Ok(d)
}

/// Distance of a packed code, same summation order as [`adc_distance`].
#[inline]
pub(crate) fn packed_distance(tables: &LookupTables, width: CodeWidth, raw: &[u8]) -> f32 {
    let k = tables.k;
    let t = &tables.data;
    let mut d = 0.0f32;
    match width {
        CodeWidth::Byte => {
            for (j, &c) in raw.iter().enumerate() {
                d += t[j * k + c as usize];
            }
        }
        CodeWidth::Nibble => {
            for j in 0..tables.m {
                let c = (raw[j / 2] >> ((j & 1) * 4)) & 0x0f;
                d += t[j * k + c as usize];
            }
        }
        CodeWidth::Word => {
            for j in 0..tables.m {
                let c = u16::from_le_bytes([raw[2 * j], raw[2 * j + 1]]);
                d += t[j * k + c as usize];
            }
        }
    }
    d
}

/// The `r` codes of `list` closest to the query, by (distance, id).
/// `r > n` returns all codes.
pub fn scan(list: &CodeList, tables: &LookupTables, r: usize) -> Result<NeighborSet> {
    let mut set = NeighborSet::new(r);
    scan_into(list, tables, &mut set)?;
    Ok(set)
}

/// Adds every code of `list` to an existing neighbor set.
pub fn scan_into(list: &CodeList, tables: &LookupTables, set: &mut NeighborSet) -> Result<()> {
    tables.check_list(list.m(), list.b())?;
    scan_range(list, tables, 0..list.len(), set);
    Ok(())
}

pub(crate) fn scan_range(
    list: &CodeList,
    tables: &LookupTables,
    range: core::ops::Range<usize>,
    set: &mut NeighborSet,
) {
    let width = list.width();
    let mut threshold = set.threshold();
    for i in range {
        let d = packed_distance(tables, width, list.raw(i));
        if let Some(t) = threshold {
            if d > t {
                continue;
            }
        }
        if set.add(list.id(i), d) {
            threshold = set.threshold();
        }
    }
}
