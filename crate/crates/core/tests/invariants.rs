use pqscan_core::eval::{exact_knn, recall_at_r};
use pqscan_core::ivf::{build_ivf, IvfConfig, Kernel};
use pqscan_core::pq::train_pq;
use pqscan_core::quickadc::qadc_scan;
use pqscan_core::{compute_tables, CodeList, DenseMatrix, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, d: usize, seed: u64, scale: f32) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(0.0..scale)).collect()).unwrap()
}

fn blobs(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f32> = (0..16 * d).map(|_| rng.random_range(0.0..200.0)).collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.random_range(0..16);
        data.extend((0..d).map(|k| centers[c * d + k] + rng.random_range(-25.0..25.0f32)));
    }
    DenseMatrix::new(n, d, data).unwrap()
}

#[test]
fn exact_knn_matches_independent_reference() {
    let base = random_matrix(1000, 16, 1, 1.0);
    let queries = random_matrix(10, 16, 2, 1.0);
    let gt = exact_knn(&base, &queries, 10).unwrap();
    for (q, y) in queries.rows().enumerate() {
        let mut all: Vec<(f64, u32)> = base
            .rows()
            .enumerate()
            .map(|(i, x)| (x.iter().zip(y).map(|(a, b)| ((a - b) as f64).powi(2)).sum(), i as u32))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<u32> = all[..10].iter().map(|p| p.1).collect();
        assert_eq!(gt.ids(q), want.as_slice());
        assert!(gt.distances(q).windows(2).all(|w| w[0] <= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_knn_follows_base_permutations(seed in any::<u64>(), n in 5usize..120) {
        let base = random_matrix(n, 4, seed, 8.0);
        let queries = random_matrix(3, 4, seed ^ 1, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = base.select_rows(&perm);
        let k = n.min(5);
        let a = exact_knn(&base, &queries, k).unwrap();
        let b = exact_knn(&shuffled, &queries, k).unwrap();
        for q in 0..3 {
            prop_assert_eq!(a.distances(q), b.distances(q));
            for (&ia, &ib) in a.ids(q).iter().zip(b.ids(q)) {
                // same distance at each rank; ids agree up to equal-distance swaps
                let da = pqscan_core::distance::l2_sq(base.row(ia as usize), queries.row(q));
                let db = pqscan_core::distance::l2_sq(base.row(perm[ib as usize]), queries.row(q));
                prop_assert_eq!(da, db);
            }
        }
    }

    #[test]
    fn quick_adc_ignores_block_padding(seed in any::<u64>(), n in 1usize..80, r in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_matrix(64, 8, seed, 10.0);
        let pq = train_pq(&data, 4, 4, &TrainConfig { kmeans_iters: 3, opq_iters: 0, seed }).unwrap();
        let mut list = CodeList::new(4, 4).unwrap();
        for _ in 0..n {
            let c: Vec<u16> = (0..4).map(|_| rng.random_range(0..16)).collect();
            list.push(&c).unwrap();
        }
        let y: Vec<f32> = (0..8).map(|_| rng.random_range(0.0..10.0)).collect();
        let tables = compute_tables(&pq, &y).unwrap();
        let got = qadc_scan(&list.transpose_blocks().unwrap(), &tables, n, r).unwrap().into_sorted();
        prop_assert_eq!(got.len(), r.min(n));
        prop_assert!(got.iter().all(|nb| (nb.id as usize) < n));
        // a longer list whose extra codes sit in the padding lanes of the
        // shorter one must only add, never drop, lanes below n
        let mut longer = list.clone();
        let pad = n.next_multiple_of(16) - n;
        for _ in 0..pad {
            longer.push(&[15, 15, 15, 15]).unwrap();
        }
        let params = pqscan_core::quickadc::qadc_params(&list.transpose_blocks().unwrap(), &tables, n, r).unwrap();
        let qt = pqscan_core::quickadc::quantize_tables_4bit(&tables, params).unwrap();
        let mut set = pqscan_core::NeighborSet::new(r);
        pqscan_core::quickadc::scan_blocks(&list.transpose_blocks().unwrap(), &qt, &mut set);
        prop_assert_eq!(set.into_sorted(), got);
    }
}

#[test]
fn ivf_recall_does_not_drop_with_more_lists() {
    let base = blobs(6000, 16, 3);
    let queries = blobs(120, 16, 4);
    let truth = exact_knn(&base, &queries, 1).unwrap();
    let cfg = IvfConfig {
        train: TrainConfig {
            kmeans_iters: 10,
            opq_iters: 0,
            seed: 5,
        },
        ..IvfConfig::new(16, 8, 4)
    };
    let index = build_ivf(&base, &cfg).unwrap();
    let mut prev = 0.0;
    for ma in [1, 2, 4, 8, 16] {
        let ids: Vec<Vec<u32>> = queries.rows().map(|y| index.query(y, ma, 10, Kernel::Adc).unwrap().ids()).collect();
        let recall = recall_at_r(&ids, &truth, 10).unwrap();
        assert!(recall >= prev - 0.01, "ma={ma}: {recall} < {prev}");
        prev = recall;
    }
}

#[test]
fn ivf_scans_the_expected_share_of_the_base() {
    let base = blobs(8000, 16, 6);
    let index = build_ivf(
        &base,
        &IvfConfig {
            train: TrainConfig {
                kmeans_iters: 10,
                opq_iters: 0,
                seed: 7,
            },
            ..IvfConfig::new(32, 8, 4)
        },
    )
    .unwrap();
    let queries = blobs(50, 16, 8);
    let mut scanned = 0;
    for y in queries.rows() {
        let (_, stats) = index.query_with_stats(y, 32, 5, Kernel::Adc).unwrap();
        assert_eq!(stats.codes_scanned, base.n());
        let (_, stats) = index.query_with_stats(y, 3, 5, Kernel::Adc).unwrap();
        let want: usize = index.nearest_lists(y, 3).iter().map(|&c| index.list(c).len()).sum();
        assert_eq!(stats.codes_scanned, want);
        scanned += stats.codes_scanned;
    }
    assert!(scanned < queries.n() * base.n());
}
