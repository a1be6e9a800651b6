//! Quick ADC: scan of 4-bit codes with 16-entry 8-bit quantized tables,
//! over block-transposed code lists. Distances are 127-bin quantized values
//! accumulated with saturation.

use alloc::vec::Vec;

use crate::adc::LookupTables;
use crate::codes::{CodeWidth, TransposedCodeList, BLOCK};
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::quantize::QuantParams;
use crate::simd::{self, SmallTable};

/// Default number of leading codes scanned to bound `qmax` at 1M scale.
pub const DEFAULT_INIT: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTables4 {
    tables: Vec<SmallTable>,
    params: QuantParams,
}

impl QuantizedTables4 {
    pub fn m(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, j: usize) -> &[u8; 16] {
        &self.tables[j]
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    /// Builds tables directly from quantized entries.
    pub fn from_entries(tables: Vec<[u8; 16]>, params: QuantParams) -> Result<Self> {
        if tables.iter().flatten().any(|&v| v > 127) {
            return Err(Error::invalid("quantized entries must lie in [0, 127]"));
        }
        Ok(Self { tables, params })
    }
}

pub fn quantize_tables_4bit(tables: &LookupTables, params: QuantParams) -> Result<QuantizedTables4> {
    if tables.k() != 16 {
        return Err(Error::UnsupportedBits(tables.k().trailing_zeros()));
    }
    let tables = (0..tables.m())
        .map(|j| core::array::from_fn(|i| params.quantize(tables.get(j, i))))
        .collect();
    Ok(QuantizedTables4 { tables, params })
}

/// Quantized distances of the 16 codes of one transposed block.
pub fn qadc_block(block: &[u8], qt: &QuantizedTables4) -> Result<[u8; 16]> {
    if qt.m() % 2 != 0 {
        return Err(Error::invalid("Quick ADC needs an even number of sub-quantizers"));
    }
    if block.len() < qt.m() / 2 * BLOCK {
        return Err(Error::DimensionMismatch {
            expected: qt.m() / 2 * BLOCK,
            found: block.len(),
        });
    }
    Ok(simd::qadc_block(block, &qt.tables, simd::has_ssse3(), 127).0)
}

pub fn qadc_scan(
    tlist: &TransposedCodeList,
    tables: &LookupTables,
    init_count: usize,
    r: usize,
) -> Result<NeighborSet<u8>> {
    qadc_scan_with_params(tlist, tables, init_count, r).map(|(set, _)| set)
}

/// Quantization bounds from the first `init_count` codes: `qmin` is the
/// smallest table entry, `qmax` the `r`-th smallest float distance among
/// those codes. With `init_count == 0`, `qmax` is the largest possible
/// distance (sum of the table maxima).
pub fn qadc_params(tlist: &TransposedCodeList, tables: &LookupTables, init_count: usize, r: usize) -> Result<QuantParams> {
    tables.check_list(tlist.m(), tlist.b())?;
    if init_count == 0 {
        let qmax = (0..tables.m())
            .map(|j| tables.table(j).iter().copied().fold(0.0f32, f32::max))
            .sum();
        return Ok(QuantParams::new(tables.min(), qmax));
    }
    if tlist.is_empty() {
        return Err(Error::Empty("transposed code list"));
    }
    let mut set = NeighborSet::new(r.max(1));
    for i in 0..init_count.min(tlist.len()) {
        let mut d = 0.0f32;
        for j in 0..tables.m() {
            d += tables.get(j, tlist.get(i, j) as usize);
        }
        set.add(i as u32, d);
    }
    Ok(QuantParams::new(tables.min(), crate::quantize::qmax_of(&set)))
}

/// Quick ADC scan returning the `r` smallest quantized distances (ties to
/// the smaller id) and the bounds used to quantize.
pub fn qadc_scan_with_params(
    tlist: &TransposedCodeList,
    tables: &LookupTables,
    init_count: usize,
    r: usize,
) -> Result<(NeighborSet<u8>, QuantParams)> {
    if CodeWidth::for_bits(tlist.b())? != CodeWidth::Nibble {
        return Err(Error::UnsupportedBits(tlist.b()));
    }
    if tlist.m() % 2 != 0 {
        return Err(Error::invalid("Quick ADC needs an even number of sub-quantizers"));
    }
    let params = qadc_params(tlist, tables, init_count, r)?;
    let qt = quantize_tables_4bit(tables, params)?;
    let mut set = NeighborSet::new(r);
    scan_blocks(tlist, &qt, &mut set);
    Ok((set, params))
}

/// Adds every code of `tlist` to `set`, by quantized distance.
pub fn scan_blocks(tlist: &TransposedCodeList, qt: &QuantizedTables4, set: &mut NeighborSet<u8>) {
    let use_simd = simd::has_ssse3();
    let mut threshold = set.threshold().unwrap_or(127);
    for blk in 0..tlist.num_blocks() {
        let (dist, mut mask) = simd::qadc_block(tlist.block(blk), &qt.tables, use_simd, threshold);
        let valid = tlist.valid(blk);
        if valid < BLOCK {
            mask &= (1u16 << valid) - 1;
        }
        while mask != 0 {
            let lane = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            if dist[lane] > threshold {
                continue;
            }
            if set.add(tlist.id(blk * BLOCK + lane), dist[lane]) {
                threshold = set.threshold().unwrap_or(127);
            }
        }
    }
}
