//! Derived quantizers: coarse `2^b̄`-centroid codebooks that decode the low
//! `b̄` bits of the codes of a `2^b`-centroid product quantizer.
//!
//! Search runs in two passes. The first scans the whole database with
//! 255-bin quantized compact tables and keeps candidates in capped buckets;
//! the second reranks the closest buckets with the full codebooks, filling
//! the full lookup tables lazily.

use alloc::vec;
use alloc::vec::Vec;

use crate::adc::{tables_for_codebooks, LookupTables};
use crate::codes::CodeList;
use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::kmeans::{kmeans, same_size_kmeans, TrainConfig};
use crate::matrix::DenseMatrix;
use crate::pq::{Codebook, ProductQuantizer};
use crate::quantize::{QuantParams, BINS_UNSIGNED};

/// Defaults for large configurations: 16-bit sub-quantizers, 8-bit derived.
pub const DEFAULT_BITS: u32 = 16;
pub const DEFAULT_DERIVED_BITS: u32 = 8;

/// Buckets 0-254 hold in-range distances, bucket 255 the saturated ones.
pub const NUM_BUCKETS: usize = 256;

/// Outcome of the joint training of one sub-space.
#[derive(Debug, Clone)]
pub struct DerivedBuild {
    /// Final codebook; centroid `i` belongs to derived cluster `i mod k̄`.
    pub full: Codebook,
    pub derived: Codebook,
    /// Temporary k-means codebook before reordering.
    pub temporary: Codebook,
    /// Temporary-centroid indexes of each derived cluster.
    pub partition: Vec<Vec<u32>>,
}

/// Trains the `k`-centroid codebook of one sub-space and its `k̄`-centroid
/// derived codebook, reordering the former so the low `log2 k̄` bits of every
/// index name the derived cluster containing that centroid.
pub fn build_derived_quantizers(
    training_sub: &DenseMatrix,
    kbar: usize,
    k: usize,
    cfg: &TrainConfig,
) -> Result<DerivedBuild> {
    if !kbar.is_power_of_two() || !k.is_power_of_two() || kbar == 0 || k % kbar != 0 {
        return Err(Error::invalid("k and k̄ must be powers of two with k̄ dividing k"));
    }
    let bbar = kbar.trailing_zeros();
    let temporary = kmeans(training_sub, k, cfg)?.codebook;
    let part = same_size_kmeans(&temporary.to_matrix(), kbar, cfg)?;
    let mut order = vec![0usize; k];
    for (l, group) in part.groups.iter().enumerate() {
        for (rank, &t) in group.iter().enumerate() {
            order[(rank << bbar) | l] = t as usize;
        }
    }
    Ok(DerivedBuild {
        full: temporary.reordered(&order)?,
        derived: part.codebook,
        temporary,
        partition: part.groups,
    })
}

/// A product quantizer together with derived codebooks sharing its codes.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedPQ {
    pq: ProductQuantizer,
    bbar: u32,
    derived: Vec<Codebook>,
}

impl DerivedPQ {
    pub fn new(pq: ProductQuantizer, bbar: u32, derived: Vec<Codebook>) -> Result<Self> {
        if bbar == 0 || bbar > pq.b() {
            return Err(Error::invalid("derived bits must be in 1..=b"));
        }
        if derived.len() != pq.m() {
            return Err(Error::DimensionMismatch {
                expected: pq.m(),
                found: derived.len(),
            });
        }
        for cb in &derived {
            if cb.k() != 1 << bbar || cb.dsub() != pq.dsub() {
                return Err(Error::invalid("derived codebooks must have 2^b̄ centroids of the sub-space size"));
            }
        }
        Ok(Self { pq, bbar, derived })
    }

    pub fn pq(&self) -> &ProductQuantizer {
        &self.pq
    }

    pub fn bbar(&self) -> u32 {
        self.bbar
    }

    pub fn kbar(&self) -> usize {
        1 << self.bbar
    }

    pub fn derived(&self) -> &[Codebook] {
        &self.derived
    }

    #[inline]
    pub fn low_bits(&self, index: u16) -> usize {
        index as usize & (self.kbar() - 1)
    }

    /// True when each derived centroid `l` is the mean of the full
    /// centroids whose low bits are `l`, within `tol` per component.
    pub fn derived_means_match(&self, tol: f32) -> bool {
        let kbar = self.kbar();
        let dsub = self.pq.dsub();
        self.pq.codebooks().iter().zip(&self.derived).all(|(full, der)| {
            (0..kbar).all(|l| {
                let members: Vec<&[f32]> = (0..full.k()).filter(|i| i & (kbar - 1) == l).map(|i| full.centroid(i)).collect();
                (0..dsub).all(|c| {
                    let mean = members.iter().map(|m| m[c] as f64).sum::<f64>() / members.len() as f64;
                    (mean as f32 - der.centroid(l)[c]).abs() <= tol
                })
            })
        })
    }
}

/// Trains `m` sub-spaces with [`build_derived_quantizers`].
pub fn train_derived(training: &DenseMatrix, m: usize, b: u32, bbar: u32, cfg: &TrainConfig) -> Result<DerivedPQ> {
    Ok(train_derived_with_builds(training, m, b, bbar, cfg)?.0)
}

/// As [`train_derived`], also returning each sub-space's training record.
pub fn train_derived_with_builds(
    training: &DenseMatrix,
    m: usize,
    b: u32,
    bbar: u32,
    cfg: &TrainConfig,
) -> Result<(DerivedPQ, Vec<DerivedBuild>)> {
    crate::codes::CodeWidth::for_bits(b)?;
    if bbar == 0 || bbar > b {
        return Err(Error::invalid("derived bits must be in 1..=b"));
    }
    if m == 0 || training.d() % m != 0 {
        return Err(Error::invalid("dimensionality must be a positive multiple of m"));
    }
    let dsub = training.d() / m;
    let mut builds = Vec::with_capacity(m);
    for j in 0..m {
        let sub = training.column_block(j * dsub, dsub);
        let sub_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(j as u64),
            ..*cfg
        };
        builds.push(build_derived_quantizers(&sub, 1 << bbar, 1 << b, &sub_cfg)?);
    }
    let pq = ProductQuantizer::new(b, builds.iter().map(|x| x.full.clone()).collect(), None)?;
    let derived = builds.iter().map(|x| x.derived.clone()).collect();
    Ok((DerivedPQ::new(pq, bbar, derived)?, builds))
}

/// Float tables of the (rotated) query against the derived codebooks.
pub fn compute_compact_tables(dpq: &DerivedPQ, y: &[f32]) -> Result<LookupTables> {
    dpq.pq.check_dim(y.len())?;
    let mut rotated = vec![0.0f32; y.len()];
    dpq.pq.rotate_into(y, &mut rotated);
    Ok(tables_for_codebooks(&dpq.derived, &rotated))
}

/// 255-bin quantized compact tables.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCompactTables {
    m: usize,
    kbar: usize,
    entries: Vec<u8>,
    params: QuantParams,
}

impl QuantizedCompactTables {
    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn get(&self, j: usize, l: usize) -> u8 {
        self.entries[j * self.kbar + l]
    }

    /// Saturating (at 255) sum of the entries addressed by the low bits of
    /// a full code.
    #[inline]
    pub fn approx_distance(&self, list: &CodeList, i: usize) -> u8 {
        let mask = self.kbar - 1;
        let mut d = 0u32;
        for j in 0..self.m {
            d += self.entries[j * self.kbar + (list.get(i, j) as usize & mask)] as u32;
        }
        d.min(BINS_UNSIGNED) as u8
    }
}

/// `qmin` is the smallest compact entry, `qmax` the largest approximate
/// distance among the first `min(r2, n)` codes.
pub fn quantize_compact_tables(compact: &LookupTables, db: &CodeList, r2: usize) -> Result<QuantizedCompactTables> {
    if db.is_empty() {
        return Err(Error::Empty("database"));
    }
    if db.m() != compact.m() {
        return Err(Error::DimensionMismatch {
            expected: compact.m(),
            found: db.m(),
        });
    }
    let kbar = compact.k();
    if kbar > 1 << db.b() {
        return Err(Error::invalid("compact tables are larger than the code alphabet"));
    }
    let mask = kbar - 1;
    let mut qmax = 0.0f32;
    for i in 0..r2.max(1).min(db.len()) {
        let mut d = 0.0f32;
        for j in 0..compact.m() {
            d += compact.get(j, db.get(i, j) as usize & mask);
        }
        qmax = qmax.max(d);
    }
    let params = QuantParams::new(compact.min(), qmax);
    let entries = compact.as_slice().iter().map(|&v| params.quantize255(v)).collect();
    Ok(QuantizedCompactTables {
        m: compact.m(),
        kbar,
        entries,
        params,
    })
}

/// Candidate store indexed by quantized distance. Entries above the running
/// upper bound are discarded; the bound drops to the lowest bucket that
/// still keeps at least `r2` candidates at or below it.
#[derive(Debug, Clone)]
pub struct CappedBuckets {
    buckets: Vec<Vec<u32>>,
    r2: usize,
    bound: usize,
    retained: usize,
}

impl CappedBuckets {
    pub fn new(r2: usize) -> Self {
        Self {
            buckets: vec![Vec::new(); NUM_BUCKETS],
            r2: r2.max(1),
            bound: NUM_BUCKETS - 1,
            retained: 0,
        }
    }

    #[inline]
    pub fn put(&mut self, distance: u8, id: u32) {
        let d = distance as usize;
        if d > self.bound {
            return;
        }
        self.buckets[d].push(id);
        self.retained += 1;
        while self.bound > 0 && self.retained - self.buckets[self.bound].len() >= self.r2 {
            self.retained -= self.buckets[self.bound].len();
            self.buckets[self.bound].clear();
            self.bound -= 1;
        }
    }

    /// Highest bucket that may hold candidates.
    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.retained
    }

    pub fn is_empty(&self) -> bool {
        self.retained == 0
    }

    pub fn bucket(&self, i: usize) -> &[u32] {
        &self.buckets[i]
    }

    pub fn r2(&self) -> usize {
        self.r2
    }
}

/// First pass: approximate distances of every code into capped buckets.
/// Bucket entries are positions in `db`.
pub fn scan_candidates(db: &CodeList, qt: &QuantizedCompactTables, r2: usize) -> CappedBuckets {
    let mut cand = CappedBuckets::new(r2);
    for i in 0..db.len() {
        cand.put(qt.approx_distance(db, i), i as u32);
    }
    cand
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RerankStats {
    pub candidates: usize,
    /// Full-table entries computed on demand.
    pub entries_computed: usize,
}

/// Full tables filled on first use; negative entries are not computed yet.
struct LazyTables<'a> {
    pq: &'a ProductQuantizer,
    y: Vec<f32>,
    entries: Vec<f32>,
    computed: usize,
}

impl<'a> LazyTables<'a> {
    fn new(pq: &'a ProductQuantizer, y: &[f32]) -> Self {
        let mut rotated = vec![0.0; y.len()];
        pq.rotate_into(y, &mut rotated);
        Self {
            pq,
            y: rotated,
            entries: vec![-1.0; pq.m() * pq.k()],
            computed: 0,
        }
    }

    #[inline]
    fn distance(&mut self, db: &CodeList, i: usize) -> f32 {
        let k = self.pq.k();
        let dsub = self.pq.dsub();
        let mut d = 0.0f32;
        for j in 0..self.pq.m() {
            let c = db.get(i, j) as usize;
            let slot = &mut self.entries[j * k + c];
            if *slot < 0.0 {
                *slot = l2_sq(&self.y[j * dsub..(j + 1) * dsub], self.pq.codebook(j).centroid(c));
                self.computed += 1;
            }
            d += *slot;
        }
        d
    }
}

pub fn rerank(
    db: &CodeList,
    cand: &CappedBuckets,
    pq: &ProductQuantizer,
    y: &[f32],
    r: usize,
    r2: usize,
) -> Result<NeighborSet> {
    rerank_with_stats(db, cand, pq, y, r, r2).map(|(set, _)| set)
}

/// Second pass: exact distances for whole buckets, lowest first, until at
/// least `r2` candidates have been processed.
pub fn rerank_with_stats(
    db: &CodeList,
    cand: &CappedBuckets,
    pq: &ProductQuantizer,
    y: &[f32],
    r: usize,
    r2: usize,
) -> Result<(NeighborSet, RerankStats)> {
    pq.check_dim(y.len())?;
    if db.m() != pq.m() || db.b() != pq.b() {
        return Err(Error::invalid("database codes do not match the quantizer"));
    }
    let mut lazy = LazyTables::new(pq, y);
    let mut set = NeighborSet::new(r);
    let mut count = 0;
    for b in 0..=cand.bound() {
        if count >= r2 {
            break;
        }
        for &pos in cand.bucket(b) {
            let d = lazy.distance(db, pos as usize);
            set.add(db.id(pos as usize), d);
        }
        count += cand.bucket(b).len();
    }
    Ok((
        set,
        RerankStats {
            candidates: count,
            entries_computed: lazy.computed,
        },
    ))
}

/// Both passes for one query.
pub fn search_two_pass(dpq: &DerivedPQ, db: &CodeList, y: &[f32], r: usize, r2: usize) -> Result<NeighborSet> {
    let compact = compute_compact_tables(dpq, y)?;
    let qt = quantize_compact_tables(&compact, db, r2)?;
    let cand = scan_candidates(db, &qt, r2);
    rerank(db, &cand, &dpq.pq, y, r, r2)
}

/// Ids of the first-pass candidates in bucket order, truncated to `r`.
pub fn first_pass_ids(dpq: &DerivedPQ, db: &CodeList, y: &[f32], r: usize, r2: usize) -> Result<Vec<u32>> {
    let compact = compute_compact_tables(dpq, y)?;
    let qt = quantize_compact_tables(&compact, db, r2)?;
    let cand = scan_candidates(db, &qt, r2);
    let mut out = Vec::with_capacity(r);
    for b in 0..=cand.bound() {
        for &pos in cand.bucket(b) {
            if out.len() == r {
                return Ok(out);
            }
            out.push(db.id(pos as usize));
        }
    }
    Ok(out)
}
