//! PQ Fast Scan over 8×8 codes.
//!
//! Codes are grouped by the high nibbles of their first four components, so
//! every code of a group reads the same 16-entry portion of tables 0-3.
//! Tables 4-7 are replaced by minimum tables (one minimum per 16-entry
//! portion, indexed by the high nibble). All eight small tables are
//! quantized to 8 bits; their saturating sum is a lower bound of the
//! quantized exact distance, and the exact distance is only computed for
//! codes whose bound does not exceed the quantized current `r`-th best.
//! Results are identical to [`crate::adc::scan`].

use alloc::vec;
use alloc::vec::Vec;

use crate::adc::{packed_distance, LookupTables};
use crate::codes::{CodeList, CodeWidth, BLOCK};
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::kmeans::{same_size_kmeans, TrainConfig};
use crate::pq::ProductQuantizer;
use crate::quantize::{init_count, qmax_of, QuantParams};
use crate::simd::{self, SmallTable};

pub const M: usize = 8;
pub const BITS: u32 = 8;
/// Bytes of a packed code once the group key is factored out.
pub const PACKED_BYTES: usize = 6;
const BLOCK_BYTES: usize = PACKED_BYTES * BLOCK;

pub type GroupKey = [u8; 4];

fn check_shape(m: usize, b: u32) -> Result<()> {
    if m != M || b != BITS {
        return Err(Error::invalid("PQ Fast Scan requires 8x8 codes (m = 8, b = 8)"));
    }
    Ok(())
}

/// Relabels the centroids of codebooks 4-7 so that indexes `16p..16p+15`
/// hold one cluster of a same-size 16×16 partition, which keeps each
/// portion minimum close to every entry of its portion. Codes produced
/// before the relabeling are invalidated.
pub fn optimize_centroid_assignment(pq: &ProductQuantizer, cfg: &TrainConfig) -> Result<ProductQuantizer> {
    check_shape(pq.m(), pq.b())?;
    let mut out = pq.clone();
    for j in 4..M {
        let cb = pq.codebook(j);
        let part = same_size_kmeans(&cb.to_matrix(), 16, &TrainConfig {
            seed: cfg.seed.wrapping_add(j as u64),
            ..*cfg
        })?;
        let order: Vec<usize> = part.groups.iter().flatten().map(|&i| i as usize).collect();
        out = out.with_codebook(j, cb.reordered(&order)?)?;
    }
    Ok(out)
}

#[inline]
pub fn group_key(code: &[u8]) -> GroupKey {
    [code[0] >> 4, code[1] >> 4, code[2] >> 4, code[3] >> 4]
}

/// 6-byte form of an 8-byte code: low nibbles of components 0-3 in two
/// bytes (even component low), then components 4-7 verbatim.
#[inline]
pub fn pack(code: &[u8]) -> [u8; PACKED_BYTES] {
    [
        (code[0] & 0x0f) | (code[1] << 4),
        (code[2] & 0x0f) | (code[3] << 4),
        code[4],
        code[5],
        code[6],
        code[7],
    ]
}

#[inline]
pub fn unpack(key: GroupKey, packed: &[u8; PACKED_BYTES]) -> [u8; M] {
    [
        (key[0] << 4) | (packed[0] & 0x0f),
        (key[1] << 4) | (packed[0] >> 4),
        (key[2] << 4) | (packed[1] & 0x0f),
        (key[3] << 4) | (packed[1] >> 4),
        packed[2],
        packed[3],
        packed[4],
        packed[5],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Group {
    pub key: GroupKey,
    /// First flat index of the group.
    pub offset: usize,
    pub count: usize,
    first_block: usize,
}

/// 8×8 codes bucketed by group key, each group stored as transposed blocks
/// of 16 packed codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedDatabase {
    groups: Vec<Group>,
    blocks: Vec<u8>,
    ids: Vec<u32>,
    /// Position of every code in the source list, by flat index.
    positions: Vec<u32>,
    /// Flat index of every source position.
    order: Vec<u32>,
}

/// Buckets codes by group key. Groups are ordered by key and keep the
/// source order of their codes.
pub fn group_codes(list: &CodeList) -> Result<GroupedDatabase> {
    check_shape(list.m(), list.b())?;
    let key_index = |k: GroupKey| ((k[0] as usize) << 12) | ((k[1] as usize) << 8) | ((k[2] as usize) << 4) | k[3] as usize;
    let mut counts = vec![0usize; 1 << 16];
    for i in 0..list.len() {
        counts[key_index(group_key(list.raw(i)))] += 1;
    }
    let mut directory = Vec::new();
    let mut start = vec![0usize; 1 << 16];
    let mut acc = 0;
    for (idx, &c) in counts.iter().enumerate() {
        start[idx] = acc;
        if c > 0 {
            let key = [(idx >> 12) as u8, ((idx >> 8) & 15) as u8, ((idx >> 4) & 15) as u8, (idx & 15) as u8];
            directory.push((key, c));
        }
        acc += c;
    }
    let n = list.len();
    let mut packed = vec![[0u8; PACKED_BYTES]; n];
    let mut ids = vec![0u32; n];
    let mut positions = vec![0u32; n];
    for i in 0..n {
        let raw = list.raw(i);
        let slot = &mut start[key_index(group_key(raw))];
        packed[*slot] = pack(raw);
        ids[*slot] = list.id(i);
        positions[*slot] = i as u32;
        *slot += 1;
    }
    GroupedDatabase::from_parts(&directory, &packed, ids, positions)
}

impl GroupedDatabase {
    /// Assembles a database from a group directory `(key, count)` and the
    /// packed codes, ids and source positions in flat (group) order.
    pub fn from_parts(
        directory: &[(GroupKey, usize)],
        packed: &[[u8; PACKED_BYTES]],
        ids: Vec<u32>,
        positions: Vec<u32>,
    ) -> Result<Self> {
        let n = packed.len();
        if ids.len() != n || positions.len() != n {
            return Err(Error::invalid("ids and positions must have one entry per code"));
        }
        if directory.iter().map(|d| d.1).sum::<usize>() != n {
            return Err(Error::invalid("group counts do not add up to the code count"));
        }
        let mut order = vec![u32::MAX; n];
        for (flat, &p) in positions.iter().enumerate() {
            let p = p as usize;
            if p >= n || order[p] != u32::MAX {
                return Err(Error::invalid("source positions are not a permutation"));
            }
            order[p] = flat as u32;
        }
        let mut groups = Vec::with_capacity(directory.len());
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut prev: Option<GroupKey> = None;
        for &(key, count) in directory {
            if key.iter().any(|&k| k >= 16) || prev.is_some_and(|p| p >= key) || count == 0 {
                return Err(Error::invalid("group keys must be distinct nibbles in ascending order"));
            }
            prev = Some(key);
            let first_block = blocks.len() / BLOCK_BYTES;
            let nblocks = count.div_ceil(BLOCK);
            let base = blocks.len();
            blocks.resize(base + nblocks * BLOCK_BYTES, 0);
            for (s, code) in packed[offset..offset + count].iter().enumerate() {
                let blk = base + (s / BLOCK) * BLOCK_BYTES;
                for (r, &byte) in code.iter().enumerate() {
                    blocks[blk + r * BLOCK + s % BLOCK] = byte;
                }
            }
            groups.push(Group {
                key,
                offset,
                count,
                first_block,
            });
            offset += count;
        }
        Ok(Self {
            groups,
            blocks,
            ids,
            positions,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    fn group_of(&self, flat: usize) -> &Group {
        let g = self.groups.partition_point(|g| g.offset + g.count <= flat);
        &self.groups[g]
    }

    /// Packed code at a flat index.
    pub fn packed(&self, flat: usize) -> [u8; PACKED_BYTES] {
        let g = self.group_of(flat);
        self.packed_in(g, flat - g.offset)
    }

    #[inline]
    fn packed_in(&self, g: &Group, slot: usize) -> [u8; PACKED_BYTES] {
        let blk = (g.first_block + slot / BLOCK) * BLOCK_BYTES;
        core::array::from_fn(|r| self.blocks[blk + r * BLOCK + slot % BLOCK])
    }

    /// Full 8-byte code at a flat index.
    pub fn code(&self, flat: usize) -> [u8; M] {
        let g = self.group_of(flat);
        unpack(g.key, &self.packed_in(g, flat - g.offset))
    }

    /// All packed codes in flat order.
    pub fn packed_codes(&self) -> Vec<[u8; PACKED_BYTES]> {
        self.groups
            .iter()
            .flat_map(|g| (0..g.count).map(move |s| self.packed_in(g, s)))
            .collect()
    }

    /// Codes back in source order, with their ids.
    pub fn ungroup(&self) -> CodeList {
        let mut list = CodeList::with_capacity(M, BITS, self.len()).expect("8x8 is supported");
        for &flat in &self.order {
            let code = self.code(flat as usize);
            let code16: [u16; M] = core::array::from_fn(|j| code[j] as u16);
            list.push_with_id(&code16, self.ids[flat as usize]).expect("valid code");
        }
        list
    }
}

/// Eight 16-entry quantized tables: tables 0-3 are the group's portions of
/// the full tables, tables 4-7 the portion minima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallTables(pub [SmallTable; 8]);

/// Quantized portions and minimum tables for one query.
struct QueryTables {
    portions: [[u8; 256]; 4],
    minima: [SmallTable; 4],
}

impl QueryTables {
    fn new(tables: &LookupTables, params: &QuantParams) -> Self {
        let portions = core::array::from_fn(|j| core::array::from_fn(|i| params.quantize(tables.get(j, i))));
        let minima = core::array::from_fn(|j| {
            let t = tables.table(4 + j);
            core::array::from_fn(|p| {
                let min = t[16 * p..16 * p + 16].iter().copied().fold(f32::INFINITY, f32::min);
                params.quantize(min)
            })
        });
        Self { portions, minima }
    }

    #[inline]
    fn small(&self, key: GroupKey) -> SmallTables {
        let mut out = [[0u8; 16]; 8];
        for j in 0..4 {
            let start = 16 * key[j] as usize;
            out[j].copy_from_slice(&self.portions[j][start..start + 16]);
        }
        out[4..].copy_from_slice(&self.minima);
        SmallTables(out)
    }
}

fn check_tables(tables: &LookupTables) -> Result<()> {
    tables.check_list(M, BITS)
}

pub fn build_small_tables(tables: &LookupTables, params: &QuantParams, key: GroupKey) -> Result<SmallTables> {
    check_tables(tables)?;
    if key.iter().any(|&k| k >= 16) {
        return Err(Error::invalid("group key nibbles must be below 16"));
    }
    Ok(QueryTables::new(tables, params).small(key))
}

/// Saturating (at 127) sum of the eight small-table lookups of a packed code.
#[inline]
pub fn lower_bound(small: &SmallTables, packed: &[u8; PACKED_BYTES]) -> u8 {
    let t = &small.0;
    let idx = [
        packed[0] & 0x0f,
        packed[0] >> 4,
        packed[1] & 0x0f,
        packed[1] >> 4,
        packed[2] >> 4,
        packed[3] >> 4,
        packed[4] >> 4,
        packed[5] >> 4,
    ];
    idx.iter()
        .zip(t)
        .fold(0u16, |acc, (&i, tab)| (acc + tab[i as usize] as u16).min(127)) as u8
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PruneStats {
    /// Codes scanned through lower bounds (the init prefix is excluded).
    pub scanned: usize,
    /// Of those, codes whose exact distance was never computed.
    pub pruned: usize,
}

impl PruneStats {
    pub fn pruned_fraction(&self) -> f64 {
        if self.scanned == 0 {
            0.0
        } else {
            self.pruned as f64 / self.scanned as f64
        }
    }

    pub fn merge(&mut self, other: PruneStats) {
        self.scanned += other.scanned;
        self.pruned += other.pruned;
    }
}

pub fn fast_scan(grouped: &GroupedDatabase, tables: &LookupTables, init: f64, r: usize) -> Result<NeighborSet> {
    fast_scan_with_stats(grouped, tables, init, r).map(|(set, _)| set)
}

/// Fast scan plus pruning statistics. The first `⌈init · n⌉` codes (in
/// source order) are scanned with float tables; they seed the result set
/// and fix `qmax`.
pub fn fast_scan_with_stats(
    grouped: &GroupedDatabase,
    tables: &LookupTables,
    init: f64,
    r: usize,
) -> Result<(NeighborSet, PruneStats)> {
    check_tables(tables)?;
    if grouped.is_empty() {
        return Err(Error::Empty("grouped database"));
    }
    if !(init > 0.0 && init <= 1.0) {
        return Err(Error::invalid("init must be in (0, 1]"));
    }
    let n = grouped.len();
    let prefix = init_count(n, init);
    let mut set = NeighborSet::new(r);
    for pos in 0..prefix {
        let flat = grouped.order[pos] as usize;
        let code = grouped.code(flat);
        set.add(grouped.ids[flat], packed_distance(tables, CodeWidth::Byte, &code));
    }
    let params = QuantParams::new(tables.min(), qmax_of(&set));
    let qt = QueryTables::new(tables, &params);
    let bound = |set: &NeighborSet| set.threshold().map_or(127, |t| params.quantize(t));
    let mut threshold = bound(&set);
    let simd = simd::has_ssse3();
    let mut computed = 0usize;

    for g in &grouped.groups {
        let small = qt.small(g.key);
        for b in 0..g.count.div_ceil(BLOCK) {
            let blk_start = (g.first_block + b) * BLOCK_BYTES;
            let block = &grouped.blocks[blk_start..blk_start + BLOCK_BYTES];
            let (lb, mut mask) = simd::fastscan_block(block, &small.0, simd, threshold);
            let valid = (g.count - b * BLOCK).min(BLOCK);
            if valid < BLOCK {
                mask &= (1u16 << valid) - 1;
            }
            while mask != 0 {
                let lane = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                if lb[lane] > threshold {
                    continue;
                }
                let flat = g.offset + b * BLOCK + lane;
                if (grouped.positions[flat] as usize) < prefix {
                    continue;
                }
                computed += 1;
                let packed: [u8; PACKED_BYTES] = core::array::from_fn(|r| block[r * BLOCK + lane]);
                let code = unpack(g.key, &packed);
                let d = packed_distance(tables, CodeWidth::Byte, &code);
                if set.add(grouped.ids[flat], d) {
                    threshold = bound(&set);
                }
            }
        }
    }
    let scanned = n - prefix;
    Ok((
        set,
        PruneStats {
            scanned,
            pruned: scanned - computed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{adc_distance, compute_tables, scan};
    use crate::pq::Codebook;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn group_of_example_code() {
        let code = [0x3f, 0x11, 0x21, 0x00, 0xaa, 0xbb, 0xcc, 0xdd];
        assert_eq!(group_key(&code), [3, 1, 2, 0]);
        let p = pack(&code);
        assert_eq!(p, [0x1f, 0x01, 0xaa, 0xbb, 0xcc, 0xdd]);
        assert_eq!(unpack([3, 1, 2, 0], &p), code);
    }

    #[test]
    fn identical_codes_form_one_group() {
        let mut list = CodeList::new(8, 8).unwrap();
        for _ in 0..40 {
            list.push(&[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        }
        let g = group_codes(&list).unwrap();
        assert_eq!(g.groups().len(), 1);
        assert_eq!(g.groups()[0].count, 40);
        assert_eq!(g.ungroup().packed(), list.packed());
    }

    #[test]
    fn rejects_wrong_shape() {
        assert!(group_codes(&CodeList::new(16, 4).unwrap()).is_err());
        assert!(group_codes(&CodeList::new(4, 8).unwrap()).is_err());
    }

    #[test]
    fn minimum_table_holds_portion_minimum() {
        let mut data = vec![50.0f32; 8 * 256];
        let first_portion = [2.0, 5.0, 9.0, 3.0, 7.0, 4.0, 8.0, 6.0, 5.0, 3.0, 2.0, 9.0, 4.0, 6.0, 7.0, 1.0];
        data[4 * 256..4 * 256 + 16].copy_from_slice(&first_portion);
        let t = LookupTables::new(8, 256, data).unwrap();
        // identity quantization on [0, 127)
        let params = QuantParams::new(0.0, 127.0);
        let s = build_small_tables(&t, &params, [0, 0, 0, 0]).unwrap();
        assert_eq!(s.0[4][0], 1);
        assert_eq!(s.0[4][1], 50);
    }

    #[test]
    fn lower_bound_saturates() {
        assert_eq!(lower_bound(&SmallTables([[0; 16]; 8]), &[0xff; 6]), 0);
        assert_eq!(lower_bound(&SmallTables([[100; 16]; 8]), &[0x12; 6]), 127);
    }

    fn random_pq(seed: u64) -> ProductQuantizer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let books = (0..8)
            .map(|_| {
                let c = (0..256 * 2).map(|_| rng.random_range(0.0..20.0f32)).collect();
                Codebook::new(256, 2, c).unwrap()
            })
            .collect();
        ProductQuantizer::new(8, books, None).unwrap()
    }

    fn random_list(n: usize, seed: u64) -> CodeList {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut list = CodeList::new(8, 8).unwrap();
        for _ in 0..n {
            let c: Vec<u16> = (0..8).map(|_| rng.random_range(0..256u16)).collect();
            list.push(&c).unwrap();
        }
        list
    }

    #[test]
    fn lower_bound_never_exceeds_quantized_distance() {
        let pq = random_pq(1);
        let list = random_list(3000, 2);
        let grouped = group_codes(&list).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let y: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..20.0f32)).collect();
            let t = compute_tables(&pq, &y).unwrap();
            let params = compute_quant_params_for(&t, &list);
            let qt = QueryTables::new(&t, &params);
            for g in grouped.groups() {
                let small = qt.small(g.key);
                for s in 0..g.count {
                    let p = grouped.packed_in(g, s);
                    let code = unpack(g.key, &p);
                    let c16: Vec<u16> = code.iter().map(|&c| c as u16).collect();
                    let exact = adc_distance(&t, &c16).unwrap();
                    assert!(lower_bound(&small, &p) <= params.quantize(exact));
                }
            }
        }
    }

    fn compute_quant_params_for(t: &LookupTables, list: &CodeList) -> QuantParams {
        crate::quantize::compute_quant_params(t, list, 0.01, 10).unwrap()
    }

    #[test]
    fn small_groups_still_exact() {
        let pq = random_pq(4);
        let list = random_list(30, 5);
        let grouped = group_codes(&list).unwrap();
        assert!(grouped.groups().iter().all(|g| g.count < 50));
        let t = compute_tables(&pq, &[5.0; 16]).unwrap();
        for r in [1, 5, 30, 40] {
            assert_eq!(
                fast_scan(&grouped, &t, 0.1, r).unwrap().into_sorted(),
                scan(&list, &t, r).unwrap().into_sorted()
            );
        }
    }

    #[test]
    fn full_init_prefix_matches_baseline() {
        let pq = random_pq(6);
        let list = random_list(500, 7);
        let grouped = group_codes(&list).unwrap();
        let t = compute_tables(&pq, &[3.0; 16]).unwrap();
        let (set, stats) = fast_scan_with_stats(&grouped, &t, 1.0, 10).unwrap();
        assert_eq!(stats.scanned, 0);
        assert_eq!(set.into_sorted(), scan(&list, &t, 10).unwrap().into_sorted());
    }

    #[test]
    fn optimized_assignment_relabels_within_blocks() {
        let pq = random_pq(8);
        let cfg = TrainConfig::with_seed(1);
        let opt = optimize_centroid_assignment(&pq, &cfg).unwrap();
        for j in 0..4 {
            assert_eq!(opt.codebook(j), pq.codebook(j));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..20.0f32)).collect();
            let a = pq.decode(&pq.encode(&x).unwrap().0).unwrap();
            let b = opt.decode(&opt.encode(&x).unwrap().0).unwrap();
            assert_eq!(a, b);
        }
        for j in 4..8 {
            let part = same_size_kmeans(
                &pq.codebook(j).to_matrix(),
                16,
                &TrainConfig { seed: cfg.seed + j as u64, ..cfg },
            )
            .unwrap();
            for (p, members) in part.groups.iter().enumerate() {
                for (slot, &orig) in members.iter().enumerate() {
                    assert_eq!(opt.codebook(j).centroid(16 * p + slot), pq.codebook(j).centroid(orig as usize));
                }
            }
        }
        assert!(optimize_centroid_assignment(&ProductQuantizer::new(
            8,
            pq.codebooks()[..4].to_vec(),
            None
        )
        .unwrap(), &cfg)
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn fast_scan_equals_baseline(
            seed in any::<u64>(),
            n in 1usize..1500,
            r in 1usize..60,
            init in prop_oneof![Just(0.001f64), Just(0.01), Just(0.05), Just(0.5)],
        ) {
            let pq = random_pq(seed);
            let list = random_list(n, seed ^ 0x55);
            let grouped = group_codes(&list).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xaa);
            let y: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..20.0f32)).collect();
            let t = compute_tables(&pq, &y).unwrap();
            prop_assert_eq!(
                fast_scan(&grouped, &t, init, r).unwrap().into_sorted(),
                scan(&list, &t, r).unwrap().into_sorted()
            );
        }

        #[test]
        fn packing_is_lossless(code in proptest::array::uniform8(any::<u8>())) {
            prop_assert_eq!(unpack(group_key(&code), &pack(&code)), code);
        }

        #[test]
        fn ungroup_restores_source(n in 0usize..300, seed in any::<u64>()) {
            let mut list = CodeList::new(8, 8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                let c: Vec<u16> = (0..8).map(|_| rng.random_range(0..256u16)).collect();
                list.push_with_id(&c, 1000 + i as u32).unwrap();
            }
            let g = group_codes(&list).unwrap();
            prop_assert!(g.groups().len() <= 65536);
            for grp in g.groups() {
                for s in 0..grp.count {
                    prop_assert_eq!(group_key(&g.code(grp.offset + s)), grp.key);
                }
            }
            prop_assert_eq!(g.ungroup(), list);
        }
    }
}
