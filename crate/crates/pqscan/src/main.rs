use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pqscan::bench::{self, BenchConfig, Method};
use pqscan::format::{self, StoredQuantizer};
use pqscan::vecs::{read_float_vecs, read_ivecs, write_fvecs, write_ivecs};
use pqscan::{synth, truth, Error, Result};
use pqscan_core::derived::{search_two_pass, train_derived};
use pqscan_core::eval::GroundTruth;
use pqscan_core::fastscan::{fast_scan, group_codes, optimize_centroid_assignment};
use pqscan_core::ivf::{build_ivf, IvfConfig, Kernel, QuantizerKind};
use pqscan_core::pq::{train_opq, train_pq};
use pqscan_core::quickadc::{qadc_scan_with_params, DEFAULT_INIT};
use pqscan_core::{compute_tables, scan, DenseMatrix, Neighbor, TrainConfig};

#[derive(Parser)]
#[command(name = "pqscan", version, about = "Product quantization search toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write clustered synthetic vectors as fvecs.
    Generate(GenerateArgs),
    /// Exact nearest neighbors as ivecs.
    GroundTruth(GroundTruthArgs),
    /// Train a quantizer and save it (PQZ1).
    Train(TrainArgs),
    /// Encode vectors with a saved quantizer (PQL1, or PQG1 with --grouped).
    Encode(EncodeArgs),
    /// Build an inverted index (IVF1).
    BuildIvf(BuildIvfArgs),
    /// Search saved codes or an index; prints `query rank id distance`.
    Query(QueryArgs),
    /// Train, encode and time kernels; CSV report on stdout.
    Bench(BenchArgs),
    /// Candidate-pass and final recall for several r2 values.
    TuneR2(TuneArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Adc,
    FastScan,
    QuickAdc,
    Derived,
}

impl From<KernelArg> for Method {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Adc => Method::Adc,
            KernelArg::FastScan => Method::FastScan,
            KernelArg::QuickAdc => Method::QuickAdc,
            KernelArg::Derived => Method::Derived,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also draw this many queries from the same clusters.
    #[arg(long, requires = "queries_out")]
    queries: Option<usize>,
    #[arg(long)]
    queries_out: Option<PathBuf>,
}

#[derive(Args)]
struct GroundTruthArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct QuantizerArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    b: u32,
    /// Derived quantizer bits.
    #[arg(long)]
    bderived: Option<u32>,
    /// Learn a rotation (OPQ).
    #[arg(long)]
    opq: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 50)]
    opq_iters: usize,
}

impl QuantizerArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kmeans_iters: self.kmeans_iters,
            opq_iters: self.opq_iters,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    base: PathBuf,
    #[command(flatten)]
    q: QuantizerArgs,
    /// Relabel centroids for fast scan (8×8 only).
    #[arg(long)]
    fast_scan: bool,
    /// Training rows; defaults to min(n, 100·2^b).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    pq: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Write the grouped fast-scan layout.
    #[arg(long)]
    grouped: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildIvfArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long = "K")]
    lists: usize,
    #[command(flatten)]
    q: QuantizerArgs,
    /// Coarse k-means sample size; the whole base by default.
    #[arg(long)]
    coarse_sample: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    queries: PathBuf,
    /// Inverted index file.
    #[arg(long, conflicts_with_all = ["pq", "codes"])]
    index: Option<PathBuf>,
    #[arg(long, requires = "codes")]
    pq: Option<PathBuf>,
    /// PQL1 codes, or PQG1 for fast scan.
    #[arg(long, requires = "pq")]
    codes: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    ma: usize,
    #[arg(long, default_value_t = 10)]
    r: usize,
    #[arg(long)]
    r2: Option<usize>,
    /// Fast scan: percent of the database. Quick ADC: number of codes.
    #[arg(long)]
    init: Option<f64>,
    #[arg(long, value_enum, default_value = "adc")]
    kernel: KernelArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    q: QuantizerArgs,
    #[arg(long = "K", default_value_t = 0)]
    lists: usize,
    #[arg(long, default_value_t = 1)]
    ma: usize,
    #[arg(long, default_value_t = 100)]
    r: usize,
    #[arg(long)]
    r2: Option<usize>,
    #[arg(long)]
    init: Option<f64>,
    /// One or more kernels, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "adc")]
    kernel: Vec<KernelArg>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also write the recall table here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    b: u32,
    #[arg(long)]
    bderived: u32,
    #[arg(long, default_value_t = 100)]
    r: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    r2: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_truth(path: &Path) -> Result<GroundTruth> {
    Ok(GroundTruth::from_ids(&read_ivecs(path)?)?)
}

fn nonempty(m: DenseMatrix, what: &'static str) -> Result<DenseMatrix> {
    if m.is_empty() {
        return Err(pqscan_core::Error::Empty(what).into());
    }
    Ok(m)
}

fn train_quantizer(data: &DenseMatrix, q: &QuantizerArgs, sample: Option<usize>) -> Result<StoredQuantizer> {
    let size = sample.unwrap_or_else(|| bench::sample_size(data.n(), q.b));
    let sample = bench::training_sample(data, size, q.seed);
    let cfg = q.train_config();
    Ok(match (q.bderived, q.opq) {
        (Some(_), true) => return Err(Error::usage("--opq and --bderived cannot be combined")),
        (Some(bbar), false) => StoredQuantizer::Derived(train_derived(&sample, q.m, q.b, bbar, &cfg)?),
        (None, true) => StoredQuantizer::Plain(train_opq(&sample, q.m, q.b, &cfg)?),
        (None, false) => StoredQuantizer::Plain(train_pq(&sample, q.m, q.b, &cfg)?),
    })
}

fn print_results(q: usize, results: &[Neighbor]) {
    for (rank, nb) in results.iter().enumerate() {
        println!("{q}\t{rank}\t{}\t{}", nb.id, nb.distance);
    }
}

fn cmd_query(a: &QueryArgs) -> Result<()> {
    let queries = nonempty(read_float_vecs(&a.queries, None)?, "query set")?;
    if let Some(path) = &a.index {
        let index = format::load_ivf(path)?;
        let kernel = match a.kernel {
            KernelArg::Adc => Kernel::Adc,
            KernelArg::QuickAdc => Kernel::QuickAdc {
                init: a.init.map_or(DEFAULT_INIT, |v| v as usize),
            },
            KernelArg::Derived => Kernel::Derived {
                r2: a.r2.ok_or_else(|| Error::usage("--kernel derived needs --r2"))?,
            },
            KernelArg::FastScan => return Err(Error::usage("fast-scan does not run inside an inverted index")),
        };
        for (qi, y) in queries.rows().enumerate() {
            print_results(qi, &index.query(y, a.ma, a.r, kernel)?.into_sorted());
        }
        return Ok(());
    }
    let (Some(pq_path), Some(codes_path)) = (&a.pq, &a.codes) else {
        return Err(Error::usage("give either --index or both --pq and --codes"));
    };
    let stored = format::load_quantizer(pq_path)?;
    let pq = stored.pq();
    let bytes = fs::read(codes_path)?;
    if a.kernel == KernelArg::FastScan {
        let grouped = format::decode_grouped(&bytes)?;
        let init = a.init.unwrap_or(bench::DEFAULT_INIT_PERCENT) / 100.0;
        for (qi, y) in queries.rows().enumerate() {
            print_results(qi, &fast_scan(&grouped, &compute_tables(pq, y)?, init, a.r)?.into_sorted());
        }
        return Ok(());
    }
    let db = format::decode_list(&bytes)?;
    for (qi, y) in queries.rows().enumerate() {
        let res = match a.kernel {
            KernelArg::Adc => scan(&db, &compute_tables(pq, y)?, a.r)?.into_sorted(),
            KernelArg::QuickAdc => {
                let tdb = db.transpose_blocks()?;
                let init = a.init.map_or(DEFAULT_INIT, |v| v as usize).min(db.len());
                let (set, params) = qadc_scan_with_params(&tdb, &compute_tables(pq, y)?, init, a.r)?;
                set.into_sorted()
                    .into_iter()
                    .map(|nb| Neighbor {
                        id: nb.id,
                        distance: params.dequantize(nb.distance),
                    })
                    .collect()
            }
            KernelArg::Derived => {
                let StoredQuantizer::Derived(dpq) = &stored else {
                    return Err(Error::usage("--kernel derived needs a quantizer trained with --bderived"));
                };
                let r2 = a.r2.ok_or_else(|| Error::usage("--kernel derived needs --r2"))?;
                search_two_pass(dpq, &db, y, a.r, r2)?.into_sorted()
            }
            KernelArg::FastScan => unreachable!(),
        };
        print_results(qi, &res);
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        bderived: a.q.bderived,
        opq: a.q.opq,
        lists: a.lists,
        ma: a.ma,
        r: a.r,
        r2: a.r2,
        init: a.init,
        train: a.q.train_config(),
        threads: a.threads,
        ..BenchConfig::new(a.q.m, a.q.b, a.kernel.iter().map(|&k| k.into()).collect())
    };
    cfg.validate()?;
    let truth_path = a
        .truth
        .as_ref()
        .ok_or_else(|| Error::usage("recall needs --truth (see the ground-truth subcommand)"))?;
    let base = read_float_vecs(&a.base, None)?;
    let queries = read_float_vecs(&a.queries, None)?;
    let truth = read_truth(truth_path)?;
    let report = bench::run_bench(&base, &queries, &truth, &cfg)?;
    let text = report.to_csv()?;
    if let Some(path) = &a.csv {
        fs::write(path, report.to_recall_csv()?)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let base = nonempty(read_float_vecs(&a.base, None)?, "base set")?;
    let queries = nonempty(read_float_vecs(&a.queries, None)?, "query set")?;
    let truth = read_truth(&a.truth)?;
    let sample = bench::training_sample(&base, bench::sample_size(base.n(), a.b), a.seed);
    let dpq = train_derived(&sample, a.m, a.b, a.bderived, &TrainConfig::with_seed(a.seed))?;
    let db = dpq.pq().encode_all(&base)?;
    let rows = bench::tune_r2(&dpq, &db, &queries, &truth, a.r, &a.r2)?;
    let text = bench::tune_csv(&rows)?;
    if let Some(path) = &a.csv {
        fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => match (a.queries, &a.queries_out) {
            (Some(nq), Some(qpath)) => {
                let (base, queries) = synth::generate_split(a.n, nq, a.d, a.clusters, a.seed)?;
                write_fvecs(&a.out, &base)?;
                write_fvecs(qpath, &queries)
            }
            _ => write_fvecs(&a.out, &synth::generate_synthetic(a.n, a.d, a.clusters, a.seed)?),
        },
        Command::GroundTruth(a) => {
            let base = nonempty(read_float_vecs(&a.base, None)?, "base set")?;
            let queries = read_float_vecs(&a.queries, None)?;
            let gt = truth::exact_knn_parallel(&base, &queries, a.k, a.threads)?;
            write_ivecs(&a.out, &gt.to_int_matrix())
        }
        Command::Train(a) => {
            let base = nonempty(read_float_vecs(&a.base, None)?, "base set")?;
            let mut q = train_quantizer(&base, &a.q, a.sample)?;
            if a.fast_scan {
                let StoredQuantizer::Plain(pq) = &q else {
                    return Err(Error::usage("--fast-scan cannot be combined with --bderived"));
                };
                q = StoredQuantizer::Plain(optimize_centroid_assignment(pq, &a.q.train_config())?);
            }
            format::save_quantizer(&a.out, &q)
        }
        Command::Encode(a) => {
            let q = format::load_quantizer(&a.pq)?;
            let codes = q.pq().encode_all(&read_float_vecs(&a.base, None)?)?;
            if a.grouped {
                format::save_grouped(&a.out, &group_codes(&codes)?)
            } else {
                format::save_list(&a.out, &codes)
            }
        }
        Command::BuildIvf(a) => {
            let base = nonempty(read_float_vecs(&a.base, None)?, "base set")?;
            let quantizer = match (a.q.bderived, a.q.opq) {
                (Some(_), true) => return Err(Error::usage("--opq and --bderived cannot be combined")),
                (Some(bbar), false) => QuantizerKind::Derived { bbar },
                (None, true) => QuantizerKind::Opq,
                (None, false) => QuantizerKind::Pq,
            };
            let cfg = IvfConfig {
                quantizer,
                train: a.q.train_config(),
                coarse_sample: a.coarse_sample,
                ..IvfConfig::new(a.lists, a.q.m, a.q.b)
            };
            format::save_ivf(&a.out, &build_ivf(&base, &cfg)?)
        }
        Command::Query(a) => cmd_query(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::TuneR2(a) => cmd_tune(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
