//! Benchmark runs and their CSV reports.

use std::time::Instant;

use pqscan_core::derived::{first_pass_ids, search_two_pass, train_derived, DerivedPQ};
use pqscan_core::eval::{recall_at_r, GroundTruth};
use pqscan_core::fastscan::{fast_scan_with_stats, group_codes, optimize_centroid_assignment, PruneStats};
use pqscan_core::ivf::{build_ivf, IvfConfig, Kernel, QuantizerKind};
use pqscan_core::pq::{train_opq, train_pq};
use pqscan_core::quickadc::{qadc_scan, DEFAULT_INIT};
use pqscan_core::{compute_tables, scan, CodeList, DenseMatrix, ProductQuantizer, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::truth::with_threads;

/// Default fast-scan init, in percent of the database.
pub const DEFAULT_INIT_PERCENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Adc,
    FastScan,
    QuickAdc,
    Derived,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adc => "adc",
            Method::FastScan => "fast-scan",
            Method::QuickAdc => "quick-adc",
            Method::Derived => "derived",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub m: usize,
    pub b: u32,
    pub bderived: Option<u32>,
    pub opq: bool,
    /// Coarse centroids; 0 scans the whole database.
    pub lists: usize,
    pub ma: usize,
    pub r: usize,
    pub r2: Option<usize>,
    /// Fast scan: percent of the database (default 0.5). Quick ADC: number
    /// of codes (default 200).
    pub init: Option<f64>,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub threads: usize,
    /// Queries run once, untimed, before measuring.
    pub warmup: usize,
}

impl BenchConfig {
    pub fn new(m: usize, b: u32, methods: Vec<Method>) -> Self {
        Self {
            m,
            b,
            bderived: None,
            opq: false,
            lists: 0,
            ma: 1,
            r: 100,
            r2: None,
            init: None,
            methods,
            train: TrainConfig::default(),
            threads: 1,
            warmup: 5,
        }
    }

    /// Rejects kernel/parameter combinations before any training.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::usage(m.to_string()));
        if self.methods.is_empty() {
            return bad("no kernel selected");
        }
        if self.r == 0 {
            return bad("--r must be positive");
        }
        if self.opq && self.bderived.is_some() {
            return bad("--opq and --bderived cannot be combined");
        }
        if self.lists > 0 && (self.ma == 0 || self.ma > self.lists) {
            return bad("--ma must be in 1..=K");
        }
        for &m in &self.methods {
            match m {
                Method::Adc => {}
                Method::FastScan if self.lists > 0 => return bad("fast-scan does not run inside an inverted index"),
                Method::FastScan if (self.m, self.b) != (8, 8) => return bad("fast-scan requires --m 8 --b 8"),
                Method::QuickAdc if self.b != 4 || self.m % 2 != 0 => {
                    return bad("quick-adc requires --b 4 and an even --m")
                }
                Method::Derived if self.bderived.is_none() => return bad("derived requires --bderived"),
                Method::Derived if self.r2.is_none() => return bad("derived requires --r2"),
                _ => {}
            }
        }
        if let Some(init) = self.init {
            if !(init > 0.0) {
                return bad("--init must be positive");
            }
            if self.methods.contains(&Method::FastScan) && init > 100.0 {
                return bad("fast-scan --init is a percentage in (0, 100]");
            }
        }
        Ok(())
    }

    fn prefix(&self) -> String {
        let mut p = String::new();
        if self.lists > 0 {
            p.push_str("ivf-");
        }
        if self.opq {
            p.push_str("opq-");
        }
        p
    }
}

/// One row of the full report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub m: usize,
    pub b: u32,
    #[serde(rename = "K")]
    pub lists: usize,
    pub ma: usize,
    pub r: usize,
    pub r2: Option<usize>,
    pub recall: f64,
    pub mean_ms_per_query: f64,
    pub median_ms_per_query: f64,
    pub scan_mcodes_per_s: f64,
    pub pruned_fraction: Option<f64>,
}

/// Row of the short recall table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub method: String,
    pub m: usize,
    pub b: u32,
    pub r: usize,
    pub recall: f64,
    pub ms_per_query: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const REPORT_HEADER: [&str; 12] = [
    "method",
    "m",
    "b",
    "K",
    "ma",
    "r",
    "r2",
    "recall",
    "mean_ms_per_query",
    "median_ms_per_query",
    "scan_mcodes_per_s",
    "pruned_fraction",
];

pub const RECALL_HEADER: [&str; 6] = ["method", "m", "b", "r", "recall", "ms_per_query"];

impl BenchReport {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows, &REPORT_HEADER)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != REPORT_HEADER {
            return Err(Error::format(0, "unexpected report header"));
        }
        let rows = r.deserialize().collect::<Result<Vec<BenchRow>, _>>()?;
        let report = Self { rows };
        report.validate()?;
        Ok(report)
    }

    pub fn recall_rows(&self) -> Vec<RecallRow> {
        self.rows
            .iter()
            .map(|row| RecallRow {
                method: row.method.clone(),
                m: row.m,
                b: row.b,
                r: row.r,
                recall: row.recall,
                ms_per_query: row.mean_ms_per_query,
            })
            .collect()
    }

    pub fn to_recall_csv(&self) -> Result<String> {
        to_csv(&self.recall_rows(), &RECALL_HEADER)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            let ok = (0.0..=1.0).contains(&row.recall)
                && row.mean_ms_per_query > 0.0
                && row.median_ms_per_query > 0.0
                && row.pruned_fraction.is_none_or(|p| (0.0..=1.0).contains(&p));
            if !ok {
                return Err(Error::format(0, format!("row {} out of range", row.method)));
            }
        }
        Ok(())
    }
}

/// A uniform sample of `size` rows (all rows when `size >= n`).
pub fn training_sample(base: &DenseMatrix, size: usize, seed: u64) -> DenseMatrix {
    if size >= base.n() {
        return base.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, base.n(), size).into_vec();
    idx.sort_unstable();
    base.select_rows(&idx)
}

/// Default training sample size for `b`-bit sub-quantizers.
pub fn sample_size(n: usize, b: u32) -> usize {
    n.min(100usize.saturating_mul(1 << b))
}

struct QueryOutcome {
    ids: Vec<u32>,
    seconds: f64,
    scanned: usize,
    prune: Option<PruneStats>,
}

fn run_queries<F>(queries: &DenseMatrix, threads: usize, warmup: usize, f: F) -> Result<Vec<QueryOutcome>>
where
    F: Fn(&[f32]) -> Result<(Vec<u32>, usize, Option<PruneStats>)> + Sync,
{
    let rows: Vec<&[f32]> = queries.rows().collect();
    for q in rows.iter().take(warmup) {
        f(q)?;
    }
    let timed = |q: &&[f32]| -> Result<QueryOutcome> {
        let start = Instant::now();
        let (ids, scanned, prune) = f(q)?;
        Ok(QueryOutcome {
            ids,
            seconds: start.elapsed().as_secs_f64().max(1e-9),
            scanned,
            prune,
        })
    };
    if threads == 1 {
        rows.iter().map(timed).collect()
    } else {
        with_threads(threads, || rows.par_iter().map(timed).collect())?
    }
}

fn summarize(cfg: &BenchConfig, method: Method, truth: &GroundTruth, out: Vec<QueryOutcome>) -> Result<BenchRow> {
    let mut ms: Vec<f64> = out.iter().map(|o| o.seconds * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let median = if ms.len() % 2 == 1 {
        ms[ms.len() / 2]
    } else {
        (ms[ms.len() / 2 - 1] + ms[ms.len() / 2]) / 2.0
    };
    let seconds: f64 = out.iter().map(|o| o.seconds).sum();
    let scanned: usize = out.iter().map(|o| o.scanned).sum();
    let prune = out.iter().filter_map(|o| o.prune).reduce(|mut a, b| {
        a.merge(b);
        a
    });
    let ids: Vec<Vec<u32>> = out.into_iter().map(|o| o.ids).collect();
    Ok(BenchRow {
        method: format!("{}{}", cfg.prefix(), method.name()),
        m: cfg.m,
        b: cfg.b,
        lists: cfg.lists,
        ma: if cfg.lists > 0 { cfg.ma } else { 0 },
        r: cfg.r,
        r2: (method == Method::Derived).then_some(cfg.r2).flatten(),
        recall: recall_at_r(&ids, truth, cfg.r)?,
        mean_ms_per_query: mean,
        median_ms_per_query: median,
        scan_mcodes_per_s: scanned as f64 / seconds / 1e6,
        pruned_fraction: prune.map(|p| p.pruned_fraction()),
    })
}

enum Trained {
    Plain(ProductQuantizer),
    Derived(DerivedPQ),
}

impl Trained {
    fn pq(&self) -> &ProductQuantizer {
        match self {
            Trained::Plain(pq) => pq,
            Trained::Derived(d) => d.pq(),
        }
    }
}

/// Trains the configured quantizer on a sample of the base.
fn train(base: &DenseMatrix, cfg: &BenchConfig) -> Result<Trained> {
    let sample = training_sample(base, sample_size(base.n(), cfg.b), cfg.train.seed);
    Ok(match (cfg.bderived, cfg.opq) {
        (Some(bbar), _) => Trained::Derived(train_derived(&sample, cfg.m, cfg.b, bbar, &cfg.train)?),
        (None, true) => Trained::Plain(train_opq(&sample, cfg.m, cfg.b, &cfg.train)?),
        (None, false) => Trained::Plain(train_pq(&sample, cfg.m, cfg.b, &cfg.train)?),
    })
}

/// Trains, encodes and runs every configured kernel over all queries.
/// Nothing is returned unless every kernel completes.
pub fn run_bench(base: &DenseMatrix, queries: &DenseMatrix, truth: &GroundTruth, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if base.is_empty() {
        return Err(pqscan_core::Error::Empty("base set").into());
    }
    if queries.is_empty() {
        return Err(pqscan_core::Error::Empty("query set").into());
    }
    if queries.d() != base.d() {
        return Err(pqscan_core::Error::DimensionMismatch {
            expected: base.d(),
            found: queries.d(),
        }
        .into());
    }
    if truth.num_queries() != queries.n() {
        return Err(Error::usage(format!(
            "ground truth covers {} queries, expected {}",
            truth.num_queries(),
            queries.n()
        )));
    }
    if cfg.lists > 0 {
        return run_ivf(base, queries, truth, cfg);
    }
    let trained = train(base, cfg)?;
    let pq = trained.pq();
    let db = pq.encode_all(base)?;
    let r = cfg.r;
    let mut report = BenchReport::default();
    for &method in &cfg.methods {
        let out = match method {
            Method::Adc => run_queries(queries, cfg.threads, cfg.warmup, |y| {
                let set = scan(&db, &compute_tables(pq, y)?, r)?;
                Ok((set.ids(), db.len(), None))
            })?,
            Method::FastScan => {
                let fpq = optimize_centroid_assignment(pq, &cfg.train)?;
                let grouped = group_codes(&fpq.encode_all(base)?)?;
                let init = cfg.init.unwrap_or(DEFAULT_INIT_PERCENT) / 100.0;
                run_queries(queries, cfg.threads, cfg.warmup, |y| {
                    let (set, stats) = fast_scan_with_stats(&grouped, &compute_tables(&fpq, y)?, init, r)?;
                    Ok((set.ids(), grouped.len(), Some(stats)))
                })?
            }
            Method::QuickAdc => {
                let tdb = db.transpose_blocks()?;
                let init = cfg.init.map_or(DEFAULT_INIT, |v| v as usize);
                run_queries(queries, cfg.threads, cfg.warmup, |y| {
                    let set = qadc_scan(&tdb, &compute_tables(pq, y)?, init.min(db.len()), r)?;
                    Ok((set.ids(), db.len(), None))
                })?
            }
            Method::Derived => {
                let Trained::Derived(dpq) = &trained else { unreachable!("validated") };
                let r2 = cfg.r2.expect("validated");
                run_queries(queries, cfg.threads, cfg.warmup, |y| {
                    let set = search_two_pass(dpq, &db, y, r, r2)?;
                    Ok((set.ids(), db.len(), None))
                })?
            }
        };
        report.rows.push(summarize(cfg, method, truth, out)?);
    }
    Ok(report)
}

fn run_ivf(base: &DenseMatrix, queries: &DenseMatrix, truth: &GroundTruth, cfg: &BenchConfig) -> Result<BenchReport> {
    let quantizer = match (cfg.bderived, cfg.opq) {
        (Some(bbar), _) => QuantizerKind::Derived { bbar },
        (None, true) => QuantizerKind::Opq,
        (None, false) => QuantizerKind::Pq,
    };
    let index = build_ivf(
        base,
        &IvfConfig {
            quantizer,
            train: cfg.train,
            ..IvfConfig::new(cfg.lists, cfg.m, cfg.b)
        },
    )?;
    let mut report = BenchReport::default();
    for &method in &cfg.methods {
        let kernel = match method {
            Method::Adc => Kernel::Adc,
            Method::QuickAdc => Kernel::QuickAdc {
                init: cfg.init.map_or(DEFAULT_INIT, |v| v as usize),
            },
            Method::Derived => Kernel::Derived {
                r2: cfg.r2.expect("validated"),
            },
            Method::FastScan => unreachable!("validated"),
        };
        let out = run_queries(queries, cfg.threads, cfg.warmup, |y| {
            let (set, stats) = index.query_with_stats(y, cfg.ma, cfg.r, kernel)?;
            Ok((set.ids(), stats.codes_scanned, None))
        })?;
        report.rows.push(summarize(cfg, method, truth, out)?);
    }
    Ok(report)
}

/// Recall of the candidate pass (at `r2`) next to the final Recall@r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub r2: usize,
    pub first_pass_recall: f64,
    pub recall: f64,
}

pub fn tune_r2(
    dpq: &DerivedPQ,
    db: &CodeList,
    queries: &DenseMatrix,
    truth: &GroundTruth,
    r: usize,
    r2_values: &[usize],
) -> Result<Vec<TuneRow>> {
    let mut out = Vec::with_capacity(r2_values.len());
    for &r2 in r2_values {
        let mut first = Vec::with_capacity(queries.n());
        let mut second = Vec::with_capacity(queries.n());
        for y in queries.rows() {
            first.push(first_pass_ids(dpq, db, y, r2, r2)?);
            second.push(search_two_pass(dpq, db, y, r, r2)?.ids());
        }
        out.push(TuneRow {
            r2,
            first_pass_recall: recall_at_r(&first, truth, r2)?,
            recall: recall_at_r(&second, truth, r)?,
        });
    }
    Ok(out)
}

pub fn tune_csv(rows: &[TuneRow]) -> Result<String> {
    to_csv(rows, &["r2", "first_pass_recall", "recall"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_split;
    use crate::truth::exact_knn_parallel;

    fn quick_cfg(m: usize, b: u32, methods: Vec<Method>) -> BenchConfig {
        BenchConfig {
            train: TrainConfig {
                kmeans_iters: 6,
                opq_iters: 2,
                seed: 3,
            },
            r: 10,
            ..BenchConfig::new(m, b, methods)
        }
    }

    #[test]
    fn csv_round_trip() {
        let (base, q) = generate_split(2000, 20, 16, 8, 1).unwrap();
        let truth = exact_knn_parallel(&base, &q, 10, 1).unwrap();
        let mut cfg = quick_cfg(4, 4, vec![Method::Adc, Method::QuickAdc]);
        cfg.threads = 2;
        let report = run_bench(&base, &q, &truth, &cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        let text = report.to_csv().unwrap();
        assert!(text.starts_with("method,m,b,K,ma,r,r2,recall,mean_ms_per_query,"));
        assert_eq!(BenchReport::from_csv(&text).unwrap(), report);
        let short = report.to_recall_csv().unwrap();
        assert!(short.starts_with("method,m,b,r,recall,ms_per_query\n"));
        assert_eq!(short.lines().count(), 3);
    }

    #[test]
    fn fast_scan_matches_adc_recall() {
        let (base, q) = generate_split(3000, 15, 16, 8, 2).unwrap();
        let truth = exact_knn_parallel(&base, &q, 1, 1).unwrap();
        let mut cfg = quick_cfg(8, 8, vec![Method::Adc, Method::FastScan]);
        cfg.init = Some(5.0);
        let report = run_bench(&base, &q, &truth, &cfg).unwrap();
        assert_eq!(report.rows[0].recall, report.rows[1].recall);
        assert!(report.rows[1].pruned_fraction.is_some());
    }

    #[test]
    fn rejects_bad_combinations_and_empty_base() {
        let (base, q) = generate_split(500, 5, 8, 4, 3).unwrap();
        let truth = exact_knn_parallel(&base, &q, 1, 1).unwrap();
        for cfg in [
            quick_cfg(4, 8, vec![Method::QuickAdc]),
            quick_cfg(4, 8, vec![Method::FastScan]),
            quick_cfg(4, 8, vec![Method::Derived]),
            BenchConfig {
                lists: 4,
                ..quick_cfg(8, 8, vec![Method::FastScan])
            },
        ] {
            assert!(matches!(run_bench(&base, &q, &truth, &cfg), Err(Error::Usage(_))));
        }
        let empty = DenseMatrix::empty(8);
        assert!(run_bench(&empty, &q, &truth, &quick_cfg(4, 4, vec![Method::Adc])).is_err());
    }

    #[test]
    fn ivf_rows_carry_list_parameters() {
        let (base, q) = generate_split(3000, 10, 8, 8, 4).unwrap();
        let truth = exact_knn_parallel(&base, &q, 1, 1).unwrap();
        let cfg = BenchConfig {
            lists: 8,
            ma: 2,
            ..quick_cfg(4, 4, vec![Method::Adc, Method::QuickAdc])
        };
        let report = run_bench(&base, &q, &truth, &cfg).unwrap();
        assert_eq!(report.rows[0].method, "ivf-adc");
        assert_eq!((report.rows[1].lists, report.rows[1].ma), (8, 2));
        assert!(report.rows[0].scan_mcodes_per_s > 0.0);
    }
}
