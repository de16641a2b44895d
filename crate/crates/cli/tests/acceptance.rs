//! Acceptance report. Prints one `PASS`, `FAIL` or `SKIP` line per criterion
//! and always exits with status 0; the report is the result.
//!
//! Environment:
//! - `GVREC_ML100K`: path of the MovieLens-100K `u.data` file
//!   (default `/root/data/ml-100k/u.data`).
//! - `GVREC_ACCEPTANCE_TRAIN=1`: allow the long training runs. Without it,
//!   criteria that need them use cached results or are skipped.
//! - `GVREC_ACCEPTANCE_FRESH=1`: ignore cached training results.
//!
//! Finished runs are cached under the cargo target directory, keyed by the
//! crate version, the split hash, the variant and the full config text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gvrec::eval::{evaluate_users, ndcg_at_k, rank_items, recall_at_k};
use gvrec::generative::{
    decode, gaussian_kl, gaussian_kl_grad, multinomial_nll, wasserstein_align, Decoder,
};
use gvrec::graphconv::{build_adjacency, spectral_radius};
use gvrec::highorder::{constraint_loss, cooccurrence, kl_rows};
use gvrec::ingest::{load_interactions, Format, InteractionSet, Split};
use gvrec::numeric::checkpoint::{hex, sha256};
use gvrec::numeric::{finite_diff_check, Coords, DenseMatrix, ParamStore, Rng, SparseMatrix};
use gvrec::training::{ablate, Model, TrainConfig, Variant};
use gvrec_cli::{evaluate_model, prepare, sweep_grid_csv, train_config, ComparisonRow, PrepareArgs, Prepared, SweepCell};

const SEEDS: [u64; 3] = [2024, 2025, 2026];
const RECALL20_MIN: f64 = 0.32;
const NDCG20_MIN: f64 = 0.28;
const RUNTIME_MAX_S: f64 = 30.0 * 60.0;
const ORDER_SLACK: f64 = 0.003;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const RADIUS_TOL: f64 = 1e-6;
const ROW_SUM_TOL: f64 = 1e-9;
const ML100K_ROW: (usize, usize, usize, &str) = (943, 1674, 55_375, "3.507");

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Skip,
        detail: detail.into(),
    }
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn work_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn ml100k_path() -> Option<PathBuf> {
    let p = std::env::var_os("GVREC_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data/ml-100k/u.data"));
    p.is_file().then_some(p)
}

// ---------------------------------------------------------------- training runs

#[derive(Clone, Debug)]
struct RunResult {
    recall20: f64,
    ndcg20: f64,
    seconds: f64,
    best_epoch: usize,
}

impl RunResult {
    fn to_text(&self) -> String {
        format!(
            "recall20 = {:?}\nndcg20 = {:?}\nseconds = {:?}\nbest_epoch = {}\n",
            self.recall20, self.ndcg20, self.seconds, self.best_epoch
        )
    }

    fn from_text(text: &str) -> Option<Self> {
        let get = |k: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(k)?.strip_prefix(" = ").map(str::to_string))
        };
        Some(RunResult {
            recall20: get("recall20")?.parse().ok()?,
            ndcg20: get("ndcg20")?.parse().ok()?,
            seconds: get("seconds")?.parse().ok()?,
            best_epoch: get("best_epoch")?.parse().ok()?,
        })
    }
}

struct Runner {
    prepared: Prepared,
    allow_train: bool,
    fresh: bool,
}

impl Runner {
    fn new(data: &Path) -> Result<Self, String> {
        let out = work_dir().join("ml100k");
        let prepared = prepare(&PrepareArgs {
            input: data.to_path_buf(),
            format: Format::TsvRating,
            out,
            threshold: None,
            test_fraction: 0.2,
            min_train: 1,
            seed: 2024,
        })
        .map_err(|e| e.to_string())?;
        Ok(Runner {
            prepared,
            allow_train: env_flag("GVREC_ACCEPTANCE_TRAIN"),
            fresh: env_flag("GVREC_ACCEPTANCE_FRESH"),
        })
    }

    /// Trains (or loads the cached result of) one configuration.
    fn run(&self, config: &TrainConfig, variant: Variant) -> Result<Option<RunResult>, String> {
        let key_text = format!(
            "{}\n{}\n{}\n{}",
            env!("CARGO_PKG_VERSION"),
            hex(&self.prepared.hash),
            variant,
            config.to_text()
        );
        let key = &hex(&sha256(key_text.as_bytes()))[..16];
        let dir = work_dir().join("runs").join(format!("{variant}-s{}-{key}", config.seed));
        let cached = dir.join("result.txt");
        if !self.fresh {
            if let Some(r) = fs::read_to_string(&cached).ok().and_then(|t| RunResult::from_text(&t)) {
                return Ok(Some(r));
            }
        }
        if !self.allow_train {
            return Ok(None);
        }
        eprintln!("training {variant} (seed {}, lambda {}, beta {})", config.seed, config.lambda, config.beta);
        let t = Instant::now();
        let outcome = train_config(&self.prepared, config.clone(), variant, &dir).map_err(|e| e.to_string())?;
        let rep = evaluate_model(&outcome.model, &self.prepared, &dir, &[20, 40], None, None)
            .map_err(|e| e.to_string())?;
        let r = RunResult {
            recall20: rep.recall_at(20).unwrap_or(0.0),
            ndcg20: rep.ndcg_at(20).unwrap_or(0.0),
            seconds: t.elapsed().as_secs_f64(),
            best_epoch: outcome.history.best_epoch,
        };
        fs::write(&cached, r.to_text()).map_err(|e| e.to_string())?;
        Ok(Some(r))
    }

    fn runs(&self, config: &TrainConfig, variant: Variant) -> Result<Option<Vec<RunResult>>, String> {
        let mut out = Vec::new();
        for seed in SEEDS {
            let cfg = ablate(&TrainConfig { seed, ..config.clone() }, variant);
            match self.run(&cfg, variant)? {
                Some(r) => out.push(r),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }
}

const NEEDS_TRAINING: &str = "no cached runs; set GVREC_ACCEPTANCE_TRAIN=1 to train";

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn ml100k_accuracy(runner: Option<&Runner>) -> Outcome {
    let Some(runner) = runner else { return skip("ML-100K not found") };
    let cfg = TrainConfig::default();
    match runner.run(&cfg, Variant::Full) {
        Err(e) => verdict(false, format!("run failed: {e}")),
        Ok(None) => skip(NEEDS_TRAINING),
        Ok(Some(r)) => verdict(
            r.recall20 >= RECALL20_MIN && r.ndcg20 >= NDCG20_MIN && r.seconds <= RUNTIME_MAX_S,
            format!(
                "R@20 {:.4} (min {RECALL20_MIN}), N@20 {:.4} (min {NDCG20_MIN}), best epoch {}, {:.0}s (max {RUNTIME_MAX_S:.0}s)",
                r.recall20, r.ndcg20, r.best_epoch, r.seconds
            ),
        ),
    }
}

fn ablation_order(runner: Option<&Runner>) -> Outcome {
    let Some(runner) = runner else { return skip("ML-100K not found") };
    let base = TrainConfig::default();
    let mut means = Vec::new();
    for v in Variant::ALL {
        match runner.runs(&base, v) {
            Err(e) => return verdict(false, format!("{v} failed: {e}")),
            Ok(None) => return skip(NEEDS_TRAINING),
            Ok(Some(rs)) => means.push((v, mean(rs.iter().map(|r| r.ndcg20)))),
        }
    }
    let n = |v: Variant| means.iter().find(|m| m.0 == v).expect("all variants ran").1;
    let (full, wo_vae, wo_fm, wo_both) = (n(Variant::Full), n(Variant::WoVae), n(Variant::WoFm), n(Variant::WoBoth));
    let ge = |a: f64, b: f64| a + ORDER_SLACK >= b;
    let ok = ge(full, wo_fm) && ge(wo_fm, wo_both) && ge(full, wo_vae) && ge(wo_vae, wo_both);
    verdict(
        ok,
        format!(
            "mean N@20 full {full:.4}, wo_fm {wo_fm:.4}, wo_vae {wo_vae:.4}, wo_both {wo_both:.4} (slack {ORDER_SLACK})"
        ),
    )
}

fn lambda_sweep(runner: Option<&Runner>) -> Outcome {
    let Some(runner) = runner else { return skip("ML-100K not found") };
    let beta = TrainConfig::default().beta;
    let lambdas = [0.1, 0.5];
    let mut cells = Vec::new();
    for &lambda in &lambdas {
        let cfg = TrainConfig { lambda, ..TrainConfig::default() };
        let rs = match runner.runs(&cfg, Variant::Full) {
            Err(e) => return verdict(false, format!("lambda {lambda} failed: {e}")),
            Ok(None) => return skip(NEEDS_TRAINING),
            Ok(Some(rs)) => rs,
        };
        let row = |r: &RunResult, seed: Option<u64>| ComparisonRow {
            label: format!("lambda={lambda}"),
            seed,
            recall20: r.recall20,
            ndcg20: r.ndcg20,
            ndcg40: f64::NAN,
        };
        let runs: Vec<ComparisonRow> = rs.iter().zip(SEEDS).map(|(r, s)| row(r, Some(s))).collect();
        let mean_row = ComparisonRow {
            seed: None,
            recall20: mean(rs.iter().map(|r| r.recall20)),
            ndcg20: mean(rs.iter().map(|r| r.ndcg20)),
            ..runs[0].clone()
        };
        cells.push(SweepCell { lambda, beta, runs, mean: mean_row });
    }
    let grid = sweep_grid_csv(&lambdas, &[beta], &cells);
    let _ = fs::write(work_dir().join("lambda_sweep.csv"), &grid);
    let (a, b) = (cells[0].mean.ndcg20, cells[1].mean.ndcg20);
    verdict(a > b, format!("mean N@20 lambda=0.1 {a:.4} vs lambda=0.5 {b:.4}"))
}

// ---------------------------------------------------------------- gradients

fn toy_interactions() -> InteractionSet {
    let pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 3), (3, 3), (3, 4), (4, 4), (4, 2), (0, 4)];
    InteractionSet::from_indexed(5, 5, pairs.to_vec(), vec![Split::Train; pairs.len()]).expect("valid toy")
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        dim: 4,
        hidden: 6,
        latent: 3,
        batch_size: 8,
        mc_users: 5,
        mc_items: 5,
        vae_batch: 5,
        val_fraction: 0.0,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn objective_error(variant: Variant) -> Result<f64, String> {
    let data = toy_interactions();
    let model = Model::new(ablate(&toy_config(), variant), &data).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(3);
    let batch = model.make_batch(data.pairs(), vec![0, 1, 2, 3, 4], &mut rng);
    model
        .gradient_check(&batch, GRAD_STEP, Coords::All, &mut rng)
        .map_err(|e| e.to_string())
}

fn store_of(mats: Vec<(&str, DenseMatrix)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, m) in mats {
        s.add(n, m);
    }
    s
}

fn constraint_error() -> Result<f64, String> {
    let mut rng = Rng::new(21);
    let data = toy_interactions();
    let (w_u, w_v) = cooccurrence(&data.build_matrix(Split::Train));
    let mut store = store_of(vec![
        ("e_u", rng.uniform_matrix(5, 4, 1.0)),
        ("e_v", rng.uniform_matrix(5, 4, 1.0)),
        ("h", rng.uniform_matrix(1, 4, 1.0)),
    ]);
    let ids: Vec<_> = store.ids().collect();
    let all: Vec<usize> = (0..5).collect();
    let eval = |s: &ParamStore| {
        constraint_loss(s.value(ids[0]), s.value(ids[1]), s.value(ids[2]), &w_u, &w_v, &all, &all)
    };
    let out = eval(&store).map_err(|e| e.to_string())?;
    for (id, g) in ids.iter().zip([&out.grad_e_u, &out.grad_e_v, &out.grad_h]) {
        store.accumulate(*id, g).map_err(|e| e.to_string())?;
    }
    finite_diff_check(|s| Ok(eval(s)?.loss), &store, GRAD_STEP, Coords::All, &mut rng).map_err(|e| e.to_string())
}

fn kl_error() -> Result<f64, String> {
    let mut rng = Rng::new(22);
    let mu = rng.sample_gaussian(5, 4);
    let sigma = rng.uniform_matrix(5, 4, 1.0).map(|x| 0.3 + x.abs());
    let mut store = store_of(vec![("mu", mu.clone()), ("sigma", sigma.clone())]);
    let ids: Vec<_> = store.ids().collect();
    let (mut gm, mut gs) = (DenseMatrix::zeros(5, 4), DenseMatrix::zeros(5, 4));
    for r in 0..5 {
        let (a, b) = gaussian_kl_grad(mu.row(r), sigma.row(r));
        gm.row_mut(r).copy_from_slice(&a);
        gs.row_mut(r).copy_from_slice(&b);
    }
    store.accumulate(ids[0], &gm).map_err(|e| e.to_string())?;
    store.accumulate(ids[1], &gs).map_err(|e| e.to_string())?;
    let f = |s: &ParamStore| {
        Ok((0..5)
            .map(|r| gaussian_kl(s.value(ids[0]).row(r), s.value(ids[1]).row(r)))
            .sum())
    };
    finite_diff_check(f, &store, GRAD_STEP, Coords::All, &mut rng).map_err(|e| e.to_string())
}

fn multinomial_error() -> Result<f64, String> {
    let mut rng = Rng::new(23);
    let logits = rng.sample_gaussian(5, 5);
    let targets: Vec<Vec<usize>> = (0..5).map(|u| vec![u, (u + 2) % 5]).collect();
    let mut store = store_of(vec![("logits", logits.clone())]);
    let id = store.ids().next().expect("one parameter");
    let mut g = DenseMatrix::zeros(5, 5);
    for r in 0..5 {
        g.row_mut(r).copy_from_slice(&multinomial_nll(logits.row(r), &targets[r]).1);
    }
    store.accumulate(id, &g).map_err(|e| e.to_string())?;
    let f = |s: &ParamStore| Ok((0..5).map(|r| multinomial_nll(s.value(id).row(r), &targets[r]).0).sum());
    finite_diff_check(f, &store, GRAD_STEP, Coords::All, &mut rng).map_err(|e| e.to_string())
}

fn alignment_error() -> Result<f64, String> {
    let mut rng = Rng::new(24);
    let a = rng.uniform_matrix(5, 5, 1.0);
    let b = rng.uniform_matrix(5, 5, 1.0);
    let (_, ga, gb) = wasserstein_align(&a, &b).map_err(|e| e.to_string())?;
    let mut store = store_of(vec![("r_hat", a), ("p", b)]);
    let ids: Vec<_> = store.ids().collect();
    store.accumulate(ids[0], &ga).map_err(|e| e.to_string())?;
    store.accumulate(ids[1], &gb).map_err(|e| e.to_string())?;
    let f = |s: &ParamStore| Ok(wasserstein_align(s.value(ids[0]), s.value(ids[1]))?.0);
    finite_diff_check(f, &store, GRAD_STEP, Coords::All, &mut rng).map_err(|e| e.to_string())
}

fn gradients() -> Outcome {
    let checks: [(&str, fn() -> Result<f64, String>); 6] = [
        ("bpr", || objective_error(Variant::WoBoth)),
        ("constraint", constraint_error),
        ("gaussian_kl", kl_error),
        ("multinomial", multinomial_error),
        ("alignment", alignment_error),
        ("total", || objective_error(Variant::Full)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, f) in checks {
        match f() {
            Ok(e) => {
                ok &= e < GRAD_TOL;
                parts.push(format!("{name} {e:.1e}"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    verdict(ok, format!("{} (tol {GRAD_TOL:e}, h {GRAD_STEP:e})", parts.join(", ")))
}

// ---------------------------------------------------------------- metrics

/// Reference top-K by repeated arg-max over the remaining candidates.
fn brute_top_k(scores: &[f64], excluded: &[bool], k: usize) -> Vec<usize> {
    let mut taken = excluded.to_vec();
    let mut out = Vec::new();
    while out.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            if best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => {
                taken[b] = true;
                out.push(b);
            }
            None => break,
        }
    }
    out
}

fn brute_metrics(top: &[usize], relevant: &[bool], k: usize) -> Option<(f64, f64)> {
    let n_rel = relevant.iter().filter(|&&r| r).count();
    if n_rel == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, &i) in top.iter().enumerate().take(k) {
        if relevant[i] {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(n_rel) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    Some((hits as f64 / n_rel as f64, dcg / idcg))
}

fn metric_oracle() -> Outcome {
    let mut rng = Rng::new(4);
    let mut mismatches = Vec::new();
    let instances = 1000;
    for t in 0..instances {
        let n = 1 + rng.below(50);
        let k = 1 + rng.below(10);
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 * 0.25).collect();
        let excluded: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.2)).collect();
        let relevant: Vec<bool> = (0..n).map(|i| !excluded[i] && rng.bernoulli(0.25)).collect();
        let ex_idx: Vec<usize> = (0..n).filter(|&i| excluded[i]).collect();
        let rel_idx: Vec<usize> = (0..n).filter(|&i| relevant[i]).collect();

        let want_top = brute_top_k(&scores, &excluded, k);
        let want = brute_metrics(&want_top, &relevant, k);
        let ranked = match rank_items(0, &scores, &ex_idx, k) {
            Ok(r) => r,
            Err(e) => {
                mismatches.push(format!("#{t}: {e}"));
                continue;
            }
        };
        let got = recall_at_k(&ranked.items, &rel_idx, k).zip(ndcg_at_k(&ranked.items, &rel_idx, k));
        if ranked.items != want_top || got != want {
            mismatches.push(format!("#{t}: ranking {:?} vs {:?}, metrics {got:?} vs {want:?}", ranked.items, want_top));
            continue;
        }
        // the batched path must agree as well
        let m = DenseMatrix::row_vector(&scores);
        match evaluate_users(&m, &[ex_idx], &[rel_idx], &[k]) {
            Ok(per_user) => {
                let batched = per_user.first().map(|u| (u.recall[0], u.ndcg[0]));
                if batched != want {
                    mismatches.push(format!("#{t}: batched {batched:?} vs {want:?}"));
                }
            }
            Err(e) => mismatches.push(format!("#{t}: {e}")),
        }
    }
    let detail = match mismatches.first() {
        None => format!("{instances} instances, N <= 50, K in 1..=10, exact agreement"),
        Some(m) => format!("{} of {instances} disagree, first {m}", mismatches.len()),
    };
    verdict(mismatches.is_empty(), detail)
}

// ---------------------------------------------------------------- invariants

fn random_bipartite(rng: &mut Rng, max_users: usize, max_items: usize) -> SparseMatrix {
    let m = 1 + rng.below(max_users);
    let n = 1 + rng.below(max_items);
    let p = 0.1 + 0.5 * rng.uniform();
    let mut t = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if rng.bernoulli(p) {
                t.push((u, i, 1.0));
            }
        }
    }
    SparseMatrix::from_triplets(m, n, t).expect("indices in range")
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

fn min_eigenvalue(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let m = nalgebra::DMatrix::from_fn(n, n, |r, c| a.get(r, c));
    m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn invariants() -> Outcome {
    let mut rng = Rng::new(5);
    let mut failures: Vec<String> = Vec::new();
    let mut worst_radius = 0.0f64;
    let mut worst_asym = 0.0f64;
    let mut worst_row_sum = 0.0f64;
    let mut worst_eig = 0.0f64;

    for t in 0..200 {
        let r = random_bipartite(&mut rng, 15, 15);
        let g = build_adjacency(&r);
        let a = g.normalized.to_dense();
        worst_asym = worst_asym.max(asymmetry(&a));
        let rho = spectral_radius(&g.normalized, 1000, &mut rng.split(t));
        worst_radius = worst_radius.max(rho);
    }
    if worst_asym > 0.0 || worst_radius > 1.0 + RADIUS_TOL {
        failures.push(format!("normalized adjacency: asymmetry {worst_asym:e}, radius {worst_radius}"));
    }

    for _ in 0..100 {
        let r = random_bipartite(&mut rng, 20, 20);
        let (w_u, w_v) = cooccurrence(&r);
        for w in [&w_u, &w_v] {
            let d = w.to_dense();
            let asym = asymmetry(&d);
            let eig = min_eigenvalue(&d);
            worst_eig = worst_eig.min(eig);
            if asym > 0.0 || eig < -1e-9 * d.max_abs().max(1.0) {
                failures.push(format!("co-occurrence: asymmetry {asym:e}, min eigenvalue {eig:e}"));
            }
            let (self_kl, _) = kl_rows(&d, &d, 1e-8).expect("same shape");
            if self_kl.abs() > 1e-12 {
                failures.push(format!("KL(W, W) = {self_kl:e}"));
            }
        }
        let (m, n, d) = (r.rows(), r.cols(), 3);
        let (e_u, e_v, h) = (rng.sample_gaussian(m, d), rng.sample_gaussian(n, d), rng.sample_gaussian(1, d));
        let users: Vec<usize> = (0..m).collect();
        let items: Vec<usize> = (0..n).collect();
        match constraint_loss(&e_u, &e_v, &h, &w_u, &w_v, &users, &items) {
            Ok(out) if out.loss >= 0.0 => {}
            Ok(out) => failures.push(format!("constraint loss {} < 0", out.loss)),
            Err(e) => failures.push(format!("constraint loss: {e}")),
        }
    }

    for _ in 0..200 {
        let k = 1 + rng.below(8);
        let mu: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let sigma: Vec<f64> = (0..k).map(|_| 0.01 + 3.0 * rng.uniform()).collect();
        let kl = gaussian_kl(&mu, &sigma);
        if kl < 0.0 {
            failures.push(format!("Gaussian KL {kl} < 0"));
        }
    }
    let at_prior = gaussian_kl(&[0.0; 6], &[1.0; 6]);
    if at_prior != 0.0 {
        failures.push(format!("Gaussian KL at the prior is {at_prior}"));
    }

    for _ in 0..50 {
        let (k, hdim, n) = (1 + rng.below(6), 1 + rng.below(10), 2 + rng.below(60));
        let (w1, b1) = (rng.uniform_matrix(k, hdim, 3.0), rng.uniform_matrix(1, hdim, 1.0));
        let (w2, b2) = (rng.uniform_matrix(hdim, n, 5.0), rng.uniform_matrix(1, n, 5.0));
        let z = rng.sample_gaussian(4, k);
        let dec = Decoder { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
        match decode(&z, &dec) {
            Ok(pi) => {
                for r in 0..pi.rows() {
                    worst_row_sum = worst_row_sum.max((pi.row(r).iter().sum::<f64>() - 1.0).abs());
                }
            }
            Err(e) => failures.push(format!("decode: {e}")),
        }
    }
    if worst_row_sum > ROW_SUM_TOL {
        failures.push(format!("decoder row sum off by {worst_row_sum:e}"));
    }

    let summary = format!(
        "radius max {worst_radius:.9}, asymmetry max {worst_asym:e}, co-occurrence min eigenvalue {worst_eig:.2e}, decoder row-sum error {worst_row_sum:.1e}"
    );
    match failures.first() {
        None => verdict(true, summary),
        Some(f) => verdict(false, format!("{} violations, first: {f}; {summary}", failures.len())),
    }
}

// ---------------------------------------------------------------- ingestion

fn ingestion(data: Option<&Path>) -> Outcome {
    let Some(path) = data else { return skip("ML-100K not found") };
    let threshold = gvrec::ingest::recognize(path).map(|k| k.rating_threshold).unwrap_or(1.0);
    match load_interactions(path, Format::TsvRating, threshold) {
        Err(e) => verdict(false, e.to_string()),
        Ok(set) => {
            let s = set.stats();
            let got = (s.users, s.items, s.interactions, s.density_percent());
            let (u, i, n, d) = ML100K_ROW;
            verdict(
                got == (u, i, n, d.to_string()),
                format!(
                    "loaded {} users, {} items, {} interactions, density {}% (threshold {threshold}); expected {u}, {i}, {n}, {d}%",
                    got.0, got.1, got.2, got.3
                ),
            )
        }
    }
}

// ---------------------------------------------------------------- determinism

fn synthetic_log(path: &Path) -> std::io::Result<()> {
    let mut text = String::new();
    for u in 0..40 {
        for i in 0..50 {
            if (u * 7 + i * 13) % 9 < 3 || (u % 4 == i % 4 && i % 3 == 0) {
                let _ = writeln!(text, "{u}\t{i}\t5\t{}", 1000 + u * 50 + i);
            }
        }
    }
    fs::write(path, text)
}

fn pipeline(input: &Path, root: &Path) -> Result<Vec<u8>, String> {
    let bin = env!("CARGO_BIN_EXE_gvrec");
    let (prep, run, eval) = (root.join("prep"), root.join("run"), root.join("eval"));
    let steps: [Vec<String>; 3] = [
        ["prepare", "--input", &input.display().to_string(), "--format", "tsv-rating", "--out", &prep.display().to_string()]
            .map(String::from)
            .to_vec(),
        [
            "train", "--data", &prep.display().to_string(), "--out", &run.display().to_string(), "--epochs", "2",
            "--set", "dim=32", "--seed", "9",
        ]
        .map(String::from)
        .to_vec(),
        [
            "evaluate", "--data", &prep.display().to_string(), "--checkpoint", &run.join("model.ckpt").display().to_string(),
            "--out", &eval.display().to_string(), "--sparsity-groups", "4",
        ]
        .map(String::from)
        .to_vec(),
    ];
    for args in steps {
        let o = Command::new(bin)
            .args(&args)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("`gvrec {}` failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
        }
    }
    let mut bytes = Vec::new();
    for f in ["metrics.csv", "metrics.json", "metrics.txt", "groups.csv"] {
        bytes.extend(fs::read(eval.join(f)).map_err(|e| e.to_string())?);
    }
    bytes.extend(fs::read(run.join("model.ckpt")).map_err(|e| e.to_string())?);
    Ok(bytes)
}

fn determinism(data: Option<&Path>) -> Outcome {
    let root = work_dir().join("determinism");
    let _ = fs::remove_dir_all(&root);
    if fs::create_dir_all(&root).is_err() {
        return verdict(false, "cannot create work directory".into());
    }
    let (input, label) = match data {
        Some(p) => (p.to_path_buf(), "ML-100K"),
        None => {
            let p = root.join("synthetic.tsv");
            if let Err(e) = synthetic_log(&p) {
                return verdict(false, e.to_string());
            }
            (p, "synthetic log")
        }
    };
    match (pipeline(&input, &root.join("a")), pipeline(&input, &root.join("b"))) {
        (Ok(a), Ok(b)) => verdict(
            a == b,
            format!("two prepare/train/evaluate pipelines on {label}: reports and checkpoints {}", if a == b { "bitwise identical" } else { "differ" }),
        ),
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

// ---------------------------------------------------------------- report

fn main() {
    let data = ml100k_path();
    let runner = data.as_deref().map(Runner::new);
    let runner = match runner {
        Some(Ok(r)) => Some(r),
        Some(Err(e)) => {
            eprintln!("cannot prepare ML-100K: {e}");
            None
        }
        None => None,
    };

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("ML-100K accuracy and runtime", Box::new(|| ml100k_accuracy(runner.as_ref()))),
        ("ablation ordering", Box::new(|| ablation_order(runner.as_ref()))),
        ("gradient correctness", Box::new(gradients)),
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("algebraic invariants", Box::new(invariants)),
        ("ingestion fidelity", Box::new(|| ingestion(data.as_deref()))),
        ("determinism", Box::new(|| determinism(data.as_deref()))),
        ("lambda sweep", Box::new(|| lambda_sweep(runner.as_ref()))),
    ];
    println!("acceptance report");
    let mut counts = [0usize; 3];
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        counts[o.status as usize] += 1;
        println!("{tag} {}. {name}: {}", i + 1, o.detail);
    }
    println!("{} passed, {} failed, {} skipped", counts[0], counts[1], counts[2]);
}
