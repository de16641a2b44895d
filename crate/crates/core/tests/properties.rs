use gvrec::eval::{ndcg_at_k, rank_items, recall_at_k};
use gvrec::generative::{decode, gaussian_kl, wasserstein_1d, Decoder};
use gvrec::graphconv::{build_adjacency, propagate, spectral_radius};
use gvrec::highorder::{constraint_loss, cooccurrence, kl_rows};
use gvrec::numeric::{spmm, Checkpoint, DenseMatrix, ParamStore, Rng, SparseMatrix};
use proptest::collection::vec;
use proptest::prelude::*;

fn bipartite(max_users: usize, max_items: usize) -> impl Strategy<Value = SparseMatrix> {
    (1..=max_users, 1..=max_items).prop_flat_map(|(m, n)| {
        vec(any::<bool>(), m * n).prop_map(move |bits| {
            let t = bits.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| (k / n, k % n, 1.0));
            SparseMatrix::from_triplets(m, n, t).unwrap()
        })
    })
}

fn dense(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

fn asymmetry(a: &DenseMatrix) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            worst = worst.max((a.get(r, c) - a.get(c, r)).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalized_adjacency_is_symmetric_and_contractive(r in bipartite(15, 15), seed in any::<u64>()) {
        let g = build_adjacency(&r);
        prop_assert_eq!(asymmetry(&g.normalized.to_dense()), 0.0);
        let rho = spectral_radius(&g.normalized, 500, &mut Rng::new(seed));
        prop_assert!(rho <= 1.0 + 1e-6, "radius {}", rho);
    }

    #[test]
    fn propagation_never_grows_the_norm(r in bipartite(10, 10), seed in any::<u64>()) {
        let g = build_adjacency(&r);
        let e = Rng::new(seed).sample_gaussian(g.n_nodes(), 3);
        let layers = propagate(&g.normalized, &e, 3).unwrap();
        let norm = |m: &DenseMatrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        for w in layers.windows(2) {
            prop_assert!(norm(&w[1]) <= norm(&w[0]) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn cooccurrence_is_symmetric_psd(r in bipartite(12, 12), xs in vec(-1.0f64..1.0, 12)) {
        let (w_u, w_v) = cooccurrence(&r);
        for w in [w_u, w_v] {
            let d = w.to_dense();
            prop_assert_eq!(asymmetry(&d), 0.0);
            let x = &xs[..d.rows()];
            let quad: f64 = (0..d.rows()).map(|i| x[i] * (0..d.cols()).map(|j| d.get(i, j) * x[j]).sum::<f64>()).sum();
            prop_assert!(quad >= -1e-9, "xᵀWx = {}", quad);
            prop_assert!(kl_rows(&d, &d, 1e-8).unwrap().0.abs() < 1e-12);
        }
    }

    #[test]
    fn constraint_loss_is_nonnegative(r in bipartite(8, 8), seed in any::<u64>()) {
        let (w_u, w_v) = cooccurrence(&r);
        let mut rng = Rng::new(seed);
        let (m, n) = (r.rows(), r.cols());
        let (e_u, e_v, h) = (rng.sample_gaussian(m, 3), rng.sample_gaussian(n, 3), rng.sample_gaussian(1, 3));
        let users: Vec<usize> = (0..m).collect();
        let items: Vec<usize> = (0..n).collect();
        let out = constraint_loss(&e_u, &e_v, &h, &w_u, &w_v, &users, &items).unwrap();
        prop_assert!(out.loss >= 0.0);
    }

    #[test]
    fn gaussian_kl_is_nonnegative(mu in vec(-5.0f64..5.0, 1..8), s in vec(0.01f64..5.0, 8)) {
        let sigma = &s[..mu.len()];
        prop_assert!(gaussian_kl(&mu, sigma) >= 0.0);
    }

    #[test]
    fn decoder_rows_are_distributions(z in dense(3, 4), w1 in dense(4, 5), w2 in dense(5, 9), b2 in dense(1, 9)) {
        let b1 = DenseMatrix::zeros(1, 5);
        let pi = decode(&z, &Decoder { w1: &w1, b1: &b1, w2: &w2, b2: &b2 }).unwrap();
        for r in 0..pi.rows() {
            let s: f64 = pi.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(pi.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn wasserstein_is_a_distance_on_samples(a in vec(-2.0f64..2.0, 1..20), seed in any::<u64>()) {
        let mut b = a.clone();
        Rng::new(seed).shuffle(&mut b);
        prop_assert_eq!(wasserstein_1d(&a, &b), 0.0);
        let c: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        prop_assert!((wasserstein_1d(&a, &c) - 0.5).abs() < 1e-12);
        prop_assert_eq!(wasserstein_1d(&a, &c), wasserstein_1d(&c, &a));
    }

    #[test]
    fn spmm_matches_dense_product((r, b) in bipartite(9, 7).prop_flat_map(|r| {
        let n = r.cols();
        (Just(r), dense(n, 3))
    })) {
        let got = spmm(&r, &b).unwrap();
        let want = r.to_dense().matmul(&b).unwrap();
        for (x, y) in got.as_slice().iter().zip(want.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_matches_brute_force(
        scores in vec(0u8..6, 1..50),
        excluded in vec(any::<bool>(), 50),
        relevant in vec(any::<bool>(), 50),
        k in 1usize..=10,
    ) {
        let n = scores.len();
        let s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
        let ex: Vec<usize> = (0..n).filter(|&i| excluded[i]).collect();
        let rel: Vec<usize> = (0..n).filter(|&i| relevant[i] && !excluded[i]).collect();
        let mut order: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k);
        let ranked = rank_items(0, &s, &ex, k).unwrap();
        prop_assert_eq!(&ranked.items, &order);
        prop_assert_eq!(ranked.short, order.len() < k);
        if rel.is_empty() {
            prop_assert!(recall_at_k(&ranked.items, &rel, k).is_none());
        } else {
            let hits: Vec<usize> = (0..order.len()).filter(|&p| rel.contains(&order[p])).collect();
            let dcg: f64 = hits.iter().map(|&p| 1.0 / ((p + 2) as f64).log2()).sum();
            let idcg: f64 = (0..k.min(rel.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
            prop_assert_eq!(recall_at_k(&ranked.items, &rel, k), Some(hits.len() as f64 / rel.len() as f64));
            prop_assert_eq!(ndcg_at_k(&ranked.items, &rel, k), Some(dcg / idcg));
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(a in dense(3, 2), b in dense(1, 4), seed in any::<u64>(), epoch in any::<u32>()) {
        let mut store = ParamStore::new();
        store.add("a", a);
        store.add("b", b);
        let text = "dim = 2\n".to_string();
        let ckpt = Checkpoint {
            config_hash: gvrec::numeric::checkpoint::sha256(text.as_bytes()),
            config_text: text,
            dataset_hash: [7; 32],
            seed,
            epoch,
            store,
        };
        let bytes = ckpt.to_bytes();
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        prop_assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
