//! Uniform quantization of float distances into 8-bit bins.
//!
//! Values in `[qmin, qmax)` map to bins `0..bins`; anything at or above
//! `qmax` maps to the overflow value `bins`. The signed-saturation kernels
//! use 127 bins (overflow 127), the capped-bucket candidate scan 255.

use crate::adc::{scan_range, LookupTables};
use crate::codes::CodeList;
use crate::error::{Error, Result};
use crate::heap::NeighborSet;

pub const BINS_SIGNED: u32 = 127;
pub const BINS_UNSIGNED: u32 = 255;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub qmin: f32,
    pub qmax: f32,
}

impl QuantParams {
    pub fn new(qmin: f32, qmax: f32) -> Self {
        Self { qmin, qmax }
    }

    /// 127-bin quantization used by the small-table kernels.
    #[inline]
    pub fn quantize(&self, v: f32) -> u8 {
        quantize_bins(v, self.qmin, self.qmax, BINS_SIGNED) as u8
    }

    /// 255-bin quantization used by the candidate scan.
    #[inline]
    pub fn quantize255(&self, v: f32) -> u8 {
        quantize_bins(v, self.qmin, self.qmax, BINS_UNSIGNED) as u8
    }

    /// Lower edge of a 127-bin value, mapped back to a float distance.
    pub fn dequantize(&self, bin: u8) -> f32 {
        if self.qmax <= self.qmin {
            return self.qmin;
        }
        self.qmin + bin as f32 * (self.qmax - self.qmin) / BINS_SIGNED as f32
    }
}

/// `⌊(v − qmin) · bins / (qmax − qmin)⌋` clamped to `[0, bins − 1]`, or
/// `bins` when `v ≥ qmax`. A degenerate range (`qmax ≤ qmin`) maps
/// everything to 0. Evaluated in f64 so the mapping is monotone.
#[inline]
pub fn quantize_bins(v: f32, qmin: f32, qmax: f32, bins: u32) -> u32 {
    if qmax <= qmin {
        return 0;
    }
    if v >= qmax {
        return bins;
    }
    let x = (v as f64 - qmin as f64) * bins as f64 / (qmax as f64 - qmin as f64);
    if x <= 0.0 {
        0
    } else {
        (x as u32).min(bins - 1)
    }
}

/// Number of leading codes scanned with float tables to bound `qmax`.
pub fn init_count(n: usize, init: f64) -> usize {
    let c = libm::ceil(init * n as f64) as usize;
    c.clamp(1, n.max(1))
}

/// `qmin` is the smallest table entry; `qmax` the distance of the `r`-th
/// nearest code among the first `⌈init · n⌉` codes (or the largest of them
/// when fewer than `r` are scanned).
pub fn compute_quant_params(tables: &LookupTables, list: &CodeList, init: f64, r: usize) -> Result<QuantParams> {
    if list.is_empty() {
        return Err(Error::Empty("code list"));
    }
    if !(init > 0.0 && init <= 1.0) {
        return Err(Error::invalid("init must be in (0, 1]"));
    }
    let count = init_count(list.len(), init);
    Ok(params_from_prefix(tables, list, count, r)?.0)
}

/// Quantization bounds from the first `count` codes, together with the
/// neighbor set those codes produced.
pub(crate) fn params_from_prefix(
    tables: &LookupTables,
    list: &CodeList,
    count: usize,
    r: usize,
) -> Result<(QuantParams, NeighborSet)> {
    tables.check_list(list.m(), list.b())?;
    let count = count.min(list.len());
    let mut set = NeighborSet::new(r.max(1));
    scan_range(list, tables, 0..count, &mut set);
    let qmax = qmax_of(&set);
    Ok((QuantParams::new(tables.min(), qmax), set))
}

pub(crate) fn qmax_of(set: &NeighborSet) -> f32 {
    match set.threshold() {
        Some(t) => t,
        None => set
            .to_sorted()
            .last()
            .map(|n| n.distance)
            .unwrap_or(f32::INFINITY),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn boundaries() {
        let p = QuantParams::new(10.0, 137.0);
        assert_eq!(p.quantize(10.0), 0);
        assert_eq!(p.quantize(137.0), 127);
        assert_eq!(p.quantize(1e9), 127);
        assert_eq!(p.quantize(136.99), 126);
        assert_eq!(p.quantize(5.0), 0);
        assert_eq!(p.quantize255(10.0), 0);
        assert_eq!(p.quantize255(137.0), 255);
        assert_eq!(p.quantize255(136.999), 254);
    }

    #[test]
    fn degenerate_range_maps_to_zero() {
        let p = QuantParams::new(3.0, 3.0);
        assert_eq!(p.quantize(3.0), 0);
        assert_eq!(p.quantize(100.0), 0);
    }

    #[test]
    fn qmax_is_rth_nearest_of_prefix() {
        let t = LookupTables::new(1, 16, (0..16).map(|i| i as f32).collect()).unwrap();
        let mut list = CodeList::new(1, 4).unwrap();
        for c in [9u16, 3, 7, 12, 1] {
            list.push(&[c]).unwrap();
        }
        let p = compute_quant_params(&t, &list, 1.0, 2).unwrap();
        assert_eq!((p.qmin, p.qmax), (0.0, 3.0));
        // first 3 codes only, r = 1: temporary nearest neighbor is 3
        let p = compute_quant_params(&t, &list, 0.6, 1).unwrap();
        assert_eq!(p.qmax, 3.0);
        // fewer scanned than r: largest scanned
        let p = compute_quant_params(&t, &list, 0.2, 4).unwrap();
        assert_eq!(p.qmax, 9.0);
    }

    #[test]
    fn empty_list_is_rejected() {
        let t = LookupTables::new(1, 16, vec![0.0; 16]).unwrap();
        let list = CodeList::new(1, 4).unwrap();
        assert!(matches!(compute_quant_params(&t, &list, 0.5, 1), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn quantization_is_monotone(
            a in 0.0f32..1e6, b in 0.0f32..1e6, qmin in 0.0f32..1e5, span in 0.0f32..1e6,
        ) {
            let p = QuantParams::new(qmin, qmin + span);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.quantize(lo) <= p.quantize(hi));
            prop_assert!(p.quantize255(lo) <= p.quantize255(hi));
        }
    }
}
