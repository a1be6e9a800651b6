//! 16-lane small-table lookups. The scalar functions are the reference;
//! the SSSE3 versions must return bit-identical results.

use crate::codes::BLOCK;

/// 16 entries of 8 bits, one register.
pub(crate) type SmallTable = [u8; 16];

#[inline]
pub(crate) fn has_ssse3() -> bool {
    #[cfg(all(target_arch = "x86_64", feature = "std"))]
    {
        std::is_x86_feature_detected!("ssse3")
    }
    #[cfg(all(target_arch = "x86_64", not(feature = "std")))]
    {
        cfg!(target_feature = "ssse3")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline]
fn sat_add(a: u8, b: u8) -> u8 {
    (a as u16 + b as u16).min(127) as u8
}

/// Bitmask of lanes whose value is at most `threshold`.
#[inline]
fn lanes_at_most(values: &[u8; 16], threshold: u8) -> u16 {
    let mut mask = 0u16;
    for (i, &v) in values.iter().enumerate() {
        if v <= threshold {
            mask |= 1 << i;
        }
    }
    mask
}

/// Quick ADC block: row `r` holds components `2r` (low nibbles) and `2r+1`
/// (high nibbles) of 16 codes; `tables[j]` is the quantized table of
/// component `j`. Saturating accumulation at 127.
pub(crate) fn qadc_block_scalar(block: &[u8], tables: &[SmallTable]) -> [u8; 16] {
    let mut acc = [0u8; 16];
    for row in 0..tables.len() / 2 {
        let comps = &block[row * BLOCK..(row + 1) * BLOCK];
        for lane in 0..BLOCK {
            let c = comps[lane];
            acc[lane] = sat_add(acc[lane], tables[2 * row][(c & 0x0f) as usize]);
            acc[lane] = sat_add(acc[lane], tables[2 * row + 1][(c >> 4) as usize]);
        }
    }
    acc
}

/// Fast-scan lower bounds over a block of 6-byte packed codes: rows 0 and 1
/// carry the low nibbles of components 0-3, rows 2-5 the full components
/// 4-7 whose high nibbles index the minimum tables.
pub(crate) fn fastscan_block_scalar(block: &[u8], tables: &[SmallTable; 8]) -> [u8; 16] {
    let mut acc = [0u8; 16];
    for lane in 0..BLOCK {
        let b0 = block[lane];
        let b1 = block[BLOCK + lane];
        let mut v = tables[0][(b0 & 0x0f) as usize];
        v = sat_add(v, tables[1][(b0 >> 4) as usize]);
        v = sat_add(v, tables[2][(b1 & 0x0f) as usize]);
        v = sat_add(v, tables[3][(b1 >> 4) as usize]);
        for j in 0..4 {
            v = sat_add(v, tables[4 + j][(block[(2 + j) * BLOCK + lane] >> 4) as usize]);
        }
        acc[lane] = v;
    }
    acc
}

pub(crate) fn qadc_block(block: &[u8], tables: &[SmallTable], simd: bool, threshold: u8) -> ([u8; 16], u16) {
    #[cfg(target_arch = "x86_64")]
    if simd {
        // SAFETY: `simd` is only set after detecting SSSE3 support.
        return unsafe { x86::qadc_block(block, tables, threshold) };
    }
    let _ = simd;
    let acc = qadc_block_scalar(block, tables);
    (acc, lanes_at_most(&acc, threshold))
}

pub(crate) fn fastscan_block(
    block: &[u8],
    tables: &[SmallTable; 8],
    simd: bool,
    threshold: u8,
) -> ([u8; 16], u16) {
    #[cfg(target_arch = "x86_64")]
    if simd {
        // SAFETY: as above.
        return unsafe { x86::fastscan_block(block, tables, threshold) };
    }
    let _ = simd;
    let acc = fastscan_block_scalar(block, tables);
    (acc, lanes_at_most(&acc, threshold))
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::SmallTable;
    use crate::codes::BLOCK;
    use core::arch::x86_64::*;

    #[inline(always)]
    unsafe fn load(p: &[u8]) -> __m128i {
        debug_assert!(p.len() >= 16);
        _mm_loadu_si128(p.as_ptr() as *const __m128i)
    }

    #[inline(always)]
    unsafe fn finish(acc: __m128i, threshold: u8) -> ([u8; 16], u16) {
        let mut out = [0u8; 16];
        _mm_storeu_si128(out.as_mut_ptr() as *mut __m128i, acc);
        // values live in [0, 127], so a signed compare is exact
        let above = _mm_cmpgt_epi8(acc, _mm_set1_epi8(threshold as i8));
        let mask = !(_mm_movemask_epi8(above) as u16);
        (out, mask)
    }

    #[target_feature(enable = "ssse3")]
    pub(super) unsafe fn qadc_block(block: &[u8], tables: &[SmallTable], threshold: u8) -> ([u8; 16], u16) {
        let low = _mm_set1_epi8(0x0f);
        let mut acc = _mm_setzero_si128();
        for row in 0..tables.len() / 2 {
            let comps = load(&block[row * BLOCK..]);
            let masked = _mm_and_si128(comps, low);
            acc = _mm_adds_epi8(acc, _mm_shuffle_epi8(load(&tables[2 * row]), masked));
            let shifted = _mm_and_si128(_mm_srli_epi16(comps, 4), low);
            acc = _mm_adds_epi8(acc, _mm_shuffle_epi8(load(&tables[2 * row + 1]), shifted));
        }
        finish(acc, threshold)
    }

    #[target_feature(enable = "ssse3")]
    pub(super) unsafe fn fastscan_block(block: &[u8], tables: &[SmallTable; 8], threshold: u8) -> ([u8; 16], u16) {
        let low = _mm_set1_epi8(0x0f);
        let r0 = load(block);
        let r1 = load(&block[BLOCK..]);
        let mut acc = _mm_shuffle_epi8(load(&tables[0]), _mm_and_si128(r0, low));
        acc = _mm_adds_epi8(
            acc,
            _mm_shuffle_epi8(load(&tables[1]), _mm_and_si128(_mm_srli_epi16(r0, 4), low)),
        );
        acc = _mm_adds_epi8(acc, _mm_shuffle_epi8(load(&tables[2]), _mm_and_si128(r1, low)));
        acc = _mm_adds_epi8(
            acc,
            _mm_shuffle_epi8(load(&tables[3]), _mm_and_si128(_mm_srli_epi16(r1, 4), low)),
        );
        for j in 0..4 {
            let row = load(&block[(2 + j) * BLOCK..]);
            let hi = _mm_and_si128(_mm_srli_epi16(row, 4), low);
            acc = _mm_adds_epi8(acc, _mm_shuffle_epi8(load(&tables[4 + j]), hi));
        }
        finish(acc, threshold)
    }
}
