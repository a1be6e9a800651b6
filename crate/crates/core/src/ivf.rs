//! IVFADC: a coarse quantizer partitions the base into inverted lists of
//! residual codes; queries scan the lists of the `ma` nearest centroids.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adc::{compute_tables, scan_into, tables_for_codebooks};
use crate::codes::{CodeList, CodeWidth, TransposedCodeList};
use crate::derived::{quantize_compact_tables, rerank, scan_candidates, train_derived, DerivedPQ};
use crate::error::{Error, Result};
use crate::heap::NeighborSet;
use crate::kmeans::{kmeans, TrainConfig};
use crate::matrix::DenseMatrix;
use crate::pq::{train_opq, train_pq, Codebook, ProductQuantizer};
use crate::quickadc::qadc_scan_with_params;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    Pq,
    Opq,
    /// Derived codebooks with `bbar` bits alongside the `b`-bit ones.
    Derived { bbar: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvfConfig {
    /// Number of coarse centroids (K).
    pub lists: usize,
    pub m: usize,
    pub b: u32,
    pub quantizer: QuantizerKind,
    pub train: TrainConfig,
    /// Coarse k-means sample size; `None` trains on the whole base.
    pub coarse_sample: Option<usize>,
}

impl IvfConfig {
    pub fn new(lists: usize, m: usize, b: u32) -> Self {
        Self {
            lists,
            m,
            b,
            quantizer: QuantizerKind::Pq,
            train: TrainConfig::default(),
            coarse_sample: None,
        }
    }

    /// Residual training sample size: `min(n, 100 * 2^b)`.
    pub fn residual_sample(&self, n: usize) -> usize {
        n.min(100usize.saturating_mul(1 << self.b))
    }
}

/// Residual quantizer of an index.
#[derive(Debug, Clone, PartialEq)]
pub enum IvfQuantizer {
    Plain(ProductQuantizer),
    Derived(DerivedPQ),
}

impl IvfQuantizer {
    pub fn pq(&self) -> &ProductQuantizer {
        match self {
            IvfQuantizer::Plain(pq) => pq,
            IvfQuantizer::Derived(d) => d.pq(),
        }
    }

    pub fn derived(&self) -> Option<&DerivedPQ> {
        match self {
            IvfQuantizer::Plain(_) => None,
            IvfQuantizer::Derived(d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Adc,
    /// Quick ADC with bounds from the first `init` codes of each list.
    QuickAdc { init: usize },
    Derived { r2: usize },
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    coarse: Codebook,
    quantizer: IvfQuantizer,
    lists: Vec<CodeList>,
    transposed: Vec<Option<TransposedCodeList>>,
}

/// Counters for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IvfStats {
    pub lists_scanned: usize,
    pub codes_scanned: usize,
}

fn sample_rows(data: &DenseMatrix, size: usize, seed: u64) -> DenseMatrix {
    if size >= data.n() {
        return data.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, data.n(), size).into_vec();
    idx.sort_unstable();
    data.select_rows(&idx)
}

fn residual_into(x: &[f32], c: &[f32], out: &mut [f32]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(c) {
        *o = a - b;
    }
}

pub fn build_ivf(base: &DenseMatrix, cfg: &IvfConfig) -> Result<IvfIndex> {
    let n = base.n();
    let needed = cfg.lists.max(1 << cfg.b);
    if cfg.lists == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if n < needed {
        return Err(Error::InsufficientData { needed, available: n });
    }
    let coarse_train = match cfg.coarse_sample {
        Some(s) => sample_rows(base, s.max(cfg.lists), cfg.train.seed),
        None => base.clone(),
    };
    let coarse = kmeans(&coarse_train, cfg.lists, &cfg.train)?.codebook;
    drop(coarse_train);
    let assign: Vec<u32> = base.rows().map(|x| coarse.nearest(x).0 as u32).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed);
    let size = cfg.residual_sample(n);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    let mut residuals = DenseMatrix::zeros(size, base.d());
    for (row, &i) in idx.iter().enumerate() {
        residual_into(base.row(i), coarse.centroid(assign[i] as usize), residuals.row_mut(row));
    }
    let quantizer = match cfg.quantizer {
        QuantizerKind::Pq => IvfQuantizer::Plain(train_pq(&residuals, cfg.m, cfg.b, &cfg.train)?),
        QuantizerKind::Opq => IvfQuantizer::Plain(train_opq(&residuals, cfg.m, cfg.b, &cfg.train)?),
        QuantizerKind::Derived { bbar } => {
            IvfQuantizer::Derived(train_derived(&residuals, cfg.m, cfg.b, bbar, &cfg.train)?)
        }
    };
    drop(residuals);

    let pq = quantizer.pq();
    let mut lists = Vec::with_capacity(cfg.lists);
    for _ in 0..cfg.lists {
        lists.push(CodeList::new(pq.m(), pq.b())?);
    }
    let mut res = vec![0.0f32; base.d()];
    for (i, x) in base.rows().enumerate() {
        let a = assign[i] as usize;
        residual_into(x, coarse.centroid(a), &mut res);
        let code = pq.encode(&res)?;
        lists[a].push_with_id(&code.0, i as u32)?;
    }
    IvfIndex::from_parts(coarse, quantizer, lists)
}

impl IvfIndex {
    /// Assembles an index; every list gets an id array.
    pub fn from_parts(coarse: Codebook, quantizer: IvfQuantizer, mut lists: Vec<CodeList>) -> Result<Self> {
        let pq = quantizer.pq();
        if coarse.dsub() != pq.d() {
            return Err(Error::DimensionMismatch {
                expected: pq.d(),
                found: coarse.dsub(),
            });
        }
        if lists.len() != coarse.k() {
            return Err(Error::DimensionMismatch {
                expected: coarse.k(),
                found: lists.len(),
            });
        }
        for list in &mut lists {
            if list.m() != pq.m() || list.b() != pq.b() {
                return Err(Error::invalid("list codes do not match the quantizer"));
            }
            if list.external_ids().is_none() {
                let ids = (0..list.len() as u32).collect();
                *list = CodeList::from_packed(list.m(), list.b(), list.len(), list.packed().to_vec(), Some(ids))?;
            }
        }
        let quick = pq.width() == CodeWidth::Nibble && pq.m() % 2 == 0;
        let transposed = lists
            .iter()
            .map(|l| if quick { l.transpose_blocks().ok() } else { None })
            .collect();
        Ok(Self {
            coarse,
            quantizer,
            lists,
            transposed,
        })
    }

    pub fn coarse(&self) -> &Codebook {
        &self.coarse
    }

    pub fn quantizer(&self) -> &IvfQuantizer {
        &self.quantizer
    }

    pub fn pq(&self) -> &ProductQuantizer {
        self.quantizer.pq()
    }

    pub fn num_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[CodeList] {
        &self.lists
    }

    pub fn list(&self, i: usize) -> &CodeList {
        &self.lists[i]
    }

    /// Total number of stored codes.
    pub fn len(&self) -> usize {
        self.lists.iter().map(CodeList::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indexes of the `ma` nearest coarse centroids, ties to the lower index.
    pub fn nearest_lists(&self, y: &[f32], ma: usize) -> Vec<usize> {
        let mut set = NeighborSet::new(ma.max(1));
        for c in 0..self.coarse.k() {
            set.add(c as u32, crate::distance::l2_sq(y, self.coarse.centroid(c)));
        }
        set.into_sorted().into_iter().map(|nb| nb.id as usize).collect()
    }

    pub fn query(&self, y: &[f32], ma: usize, r: usize, kernel: Kernel) -> Result<NeighborSet> {
        self.query_with_stats(y, ma, r, kernel).map(|(set, _)| set)
    }

    /// Scans the lists of the `ma` nearest centroids and merges their
    /// results. Quick ADC distances are rescaled to floats before merging.
    pub fn query_with_stats(&self, y: &[f32], ma: usize, r: usize, kernel: Kernel) -> Result<(NeighborSet, IvfStats)> {
        let pq = self.pq();
        pq.check_dim(y.len())?;
        if ma == 0 || ma > self.num_lists() {
            return Err(Error::invalid("ma must be in 1..=K"));
        }
        match kernel {
            Kernel::QuickAdc { .. } if pq.width() != CodeWidth::Nibble || pq.m() % 2 != 0 => {
                return Err(Error::invalid("quick-adc needs 4-bit sub-quantizers and an even m"));
            }
            Kernel::Derived { .. } if self.quantizer.derived().is_none() => {
                return Err(Error::invalid("derived kernel needs an index built with derived quantizers"));
            }
            _ => {}
        }
        let mut set = NeighborSet::new(r);
        let mut stats = IvfStats::default();
        let mut res = vec![0.0f32; y.len()];
        for c in self.nearest_lists(y, ma) {
            let list = &self.lists[c];
            if list.is_empty() {
                continue;
            }
            stats.lists_scanned += 1;
            stats.codes_scanned += list.len();
            residual_into(y, self.coarse.centroid(c), &mut res);
            match kernel {
                Kernel::Adc => scan_into(list, &compute_tables(pq, &res)?, &mut set)?,
                Kernel::QuickAdc { init } => {
                    let tlist = self.transposed[c].as_ref().ok_or(Error::Empty("transposed list"))?;
                    let tables = compute_tables(pq, &res)?;
                    let (local, params) = qadc_scan_with_params(tlist, &tables, init.min(list.len()), r)?;
                    for nb in local.into_sorted() {
                        set.add(nb.id, params.dequantize(nb.distance));
                    }
                }
                Kernel::Derived { r2 } => {
                    let dpq = self.quantizer.derived().expect("checked above");
                    let mut rotated = vec![0.0f32; y.len()];
                    pq.rotate_into(&res, &mut rotated);
                    let compact = tables_for_codebooks(dpq.derived(), &rotated);
                    let qt = quantize_compact_tables(&compact, list, r2)?;
                    let cand = scan_candidates(list, &qt, r2);
                    set.extend(rerank(list, &cand, pq, &res, r, r2)?.into_sorted());
                }
            }
        }
        Ok((set, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::scan;
    use crate::heap::Neighbor;
    use rand::Rng;

    fn clustered(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f32>> = (0..8).map(|_| (0..d).map(|_| rng.random_range(0.0..100.0)).collect()).collect();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let c = &centers[rng.random_range(0..8)];
            data.extend(c.iter().map(|v| v + rng.random_range(-10.0..10.0f32)));
        }
        DenseMatrix::new(n, d, data).unwrap()
    }

    fn cfg(lists: usize, m: usize, b: u32) -> IvfConfig {
        IvfConfig {
            train: TrainConfig {
                kmeans_iters: 8,
                opq_iters: 3,
                seed: 1,
            },
            ..IvfConfig::new(lists, m, b)
        }
    }

    /// Oracle: every stored code scanned against its own list's residual query.
    fn exhaustive(index: &IvfIndex, y: &[f32], r: usize) -> Vec<Neighbor> {
        let mut all = Vec::new();
        for c in 0..index.num_lists() {
            let res: Vec<f32> = y.iter().zip(index.coarse().centroid(c)).map(|(a, b)| a - b).collect();
            let t = compute_tables(index.pq(), &res).unwrap();
            for i in 0..index.list(c).len() {
                let d = crate::adc::adc_distance(&t, &index.list(c).code(i)).unwrap();
                all.push(Neighbor {
                    id: index.list(c).id(i),
                    distance: d,
                });
            }
        }
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        all.truncate(r);
        all
    }

    #[test]
    fn partition_is_complete() {
        let base = clustered(1500, 8, 1);
        let index = build_ivf(&base, &cfg(16, 4, 4)).unwrap();
        let mut ids: Vec<u32> = index.lists().iter().flat_map(|l| (0..l.len()).map(|i| l.id(i))).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..1500).collect::<Vec<_>>());
        assert_eq!(index.len(), 1500);
    }

    #[test]
    fn single_list_reduces_to_scan() {
        let base = clustered(800, 8, 2);
        let index = build_ivf(&base, &cfg(1, 4, 4)).unwrap();
        let queries = clustered(10, 8, 3);
        for y in queries.rows() {
            let res: Vec<f32> = y.iter().zip(index.coarse().centroid(0)).map(|(a, b)| a - b).collect();
            let want = scan(index.list(0), &compute_tables(index.pq(), &res).unwrap(), 20).unwrap().into_sorted();
            assert_eq!(index.query(y, 1, 20, Kernel::Adc).unwrap().into_sorted(), want);
        }
    }

    #[test]
    fn all_lists_equal_exhaustive_residual_scan() {
        let base = clustered(1200, 8, 4);
        for kind in [QuantizerKind::Pq, QuantizerKind::Opq] {
            let index = build_ivf(&base, &IvfConfig { quantizer: kind, ..cfg(12, 4, 4) }).unwrap();
            for y in clustered(10, 8, 5).rows() {
                assert_eq!(index.query(y, 12, 30, Kernel::Adc).unwrap().into_sorted(), exhaustive(&index, y, 30));
            }
        }
    }

    #[test]
    fn centroid_vector_lands_in_its_list_with_zero_residual() {
        let base = clustered(600, 8, 6);
        let index = build_ivf(&base, &cfg(8, 4, 4)).unwrap();
        let mut rows: Vec<Vec<f32>> = base.rows().map(<[f32]>::to_vec).collect();
        rows.push(index.coarse().centroid(3).to_vec());
        let with = DenseMatrix::from_rows(&rows).unwrap();
        let pq = index.pq().clone();
        let coarse = index.coarse().clone();
        let assign = coarse.nearest(with.row(600)).0;
        assert_eq!(assign, 3);
        let zero = pq.encode(&[0.0; 8]).unwrap();
        let mut lists: Vec<CodeList> = index.lists().to_vec();
        lists[assign].push_with_id(&zero.0, 600).unwrap();
        let rebuilt = IvfIndex::from_parts(coarse, IvfQuantizer::Plain(pq), lists).unwrap();
        let l = rebuilt.list(3);
        assert_eq!(l.id(l.len() - 1), 600);
        assert_eq!(l.code(l.len() - 1), zero.0);
    }

    #[test]
    fn stored_vector_is_found_with_its_residual_error() {
        let base = clustered(1000, 8, 7);
        let index = build_ivf(&base, &cfg(8, 4, 4)).unwrap();
        for q in [0usize, 17, 333] {
            let y = base.row(q);
            let c = index.coarse().nearest(y).0;
            let pos = (0..index.list(c).len()).find(|&i| index.list(c).id(i) == q as u32).unwrap();
            let decoded = index.pq().decode(&index.list(c).code(pos)).unwrap();
            let res: Vec<f32> = y.iter().zip(index.coarse().centroid(c)).map(|(a, b)| a - b).collect();
            let err = crate::distance::l2_sq(&res, &decoded);
            let got = index.query(y, 2, 50, Kernel::Adc).unwrap().into_sorted();
            let hit = got.iter().find(|nb| nb.id == q as u32).unwrap();
            assert!((hit.distance - err).abs() <= 1e-3 * err.max(1.0));
        }
    }

    #[test]
    fn merge_equals_sorted_union() {
        let base = clustered(1500, 8, 8);
        let index = build_ivf(&base, &cfg(10, 4, 4)).unwrap();
        for y in clustered(5, 8, 9).rows() {
            let mut union = Vec::new();
            for c in index.nearest_lists(y, 4) {
                let res: Vec<f32> = y.iter().zip(index.coarse().centroid(c)).map(|(a, b)| a - b).collect();
                union.extend(scan(index.list(c), &compute_tables(index.pq(), &res).unwrap(), 25).unwrap().into_sorted());
            }
            union.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
            union.truncate(25);
            assert_eq!(index.query(y, 4, 25, Kernel::Adc).unwrap().into_sorted(), union);
        }
    }

    #[test]
    fn kernels_agree_roughly_and_check_compatibility() {
        let base = clustered(3000, 8, 10);
        let index = build_ivf(&base, &cfg(4, 4, 4)).unwrap();
        let y = base.row(5);
        let q = index.query(y, 2, 10, Kernel::QuickAdc { init: 200 }).unwrap().ids();
        assert!(q.contains(&5));
        assert!(index.query(y, 2, 10, Kernel::Derived { r2: 100 }).is_err());
        assert!(index.query(y, 0, 10, Kernel::Adc).is_err());
        assert!(index.query(y, 5, 10, Kernel::Adc).is_err());

        let dindex = build_ivf(
            &base,
            &IvfConfig {
                quantizer: QuantizerKind::Derived { bbar: 3 },
                ..cfg(4, 2, 8)
            },
        )
        .unwrap();
        assert!(dindex.query(y, 2, 10, Kernel::QuickAdc { init: 10 }).is_err());
        let full = dindex.query(y, 4, 10, Kernel::Adc).unwrap().into_sorted();
        let two = dindex.query(y, 4, 10, Kernel::Derived { r2: 3000 }).unwrap().into_sorted();
        assert_eq!(full, two);
    }

    #[test]
    fn scanned_count_matches_chosen_lists() {
        let base = clustered(2000, 8, 11);
        let index = build_ivf(&base, &cfg(16, 4, 4)).unwrap();
        let y = base.row(1);
        let (_, stats) = index.query_with_stats(y, 3, 10, Kernel::Adc).unwrap();
        let want: usize = index.nearest_lists(y, 3).iter().map(|&c| index.list(c).len()).sum();
        assert_eq!(stats.codes_scanned, want);
    }

    #[test]
    fn rejects_small_bases() {
        let base = clustered(10, 8, 12);
        assert!(matches!(build_ivf(&base, &cfg(16, 4, 4)), Err(Error::InsufficientData { .. })));
    }
}
