//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain text and numbers and returns a JSON
//! string. The `*_json` functions hold the logic and run natively too.

use gvrec::eval::{ndcg_at_k, rank_items, recall_at_k};
use gvrec::graphconv::{build_adjacency, pool, propagate, score_matrix, spectral_radius, split_nodes};
use gvrec::ingest::{InteractionSet, Split};
use gvrec::numeric::{DenseMatrix, Rng, SparseMatrix};
use gvrec::training::{ablate, Model, TrainConfig, Variant};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `user item` index pairs, one per line; `#` starts a comment.
fn parse_pairs(text: &str) -> Result<(usize, usize, Vec<(usize, usize)>), String> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("line {}: `{s}` is not an index", n + 1));
        match nums.as_slice() {
            [u, i] => pairs.push((parse(u)?, parse(i)?)),
            _ => return Err(format!("line {}: expected `user item`", n + 1)),
        }
    }
    if pairs.is_empty() {
        return Err("no interactions given".into());
    }
    pairs.sort_unstable();
    pairs.dedup();
    let m = pairs.iter().map(|p| p.0).max().unwrap() + 1;
    let n = pairs.iter().map(|p| p.1).max().unwrap() + 1;
    Ok((m, n, pairs))
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("cannot parse `{s}`")))
        .collect()
}

/// Normalized adjacency, its spectral radius, propagated and pooled
/// embeddings and the resulting user-item scores for a toy graph.
pub fn propagate_json(pairs: &str, layers: usize, dim: usize, seed: u64) -> Result<String, String> {
    let (m, n, pairs) = parse_pairs(pairs)?;
    let r = SparseMatrix::from_triplets(m, n, pairs.iter().map(|&(u, i)| (u, i, 1.0))).map_err(|e| e.to_string())?;
    let g = build_adjacency(&r);
    let mut rng = Rng::new(seed);
    let e = rng.sample_gaussian(m + n, dim.max(1));
    let hs = propagate(&g.normalized, &e, layers).map_err(|e| e.to_string())?;
    let pooled = pool(&hs).map_err(|e| e.to_string())?;
    let (e_u, e_v) = split_nodes(&pooled, m);
    let p = score_matrix(&e_u, &e_v).map_err(|e| e.to_string())?;
    let out = json!({
        "users": m,
        "items": n,
        "normalized": rows(&g.normalized.to_dense()),
        "spectral_radius": spectral_radius(&g.normalized, 200, &mut rng.split(1)),
        "layer_norms": hs.iter().map(|h| h.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()).collect::<Vec<_>>(),
        "scores": rows(&p),
    });
    Ok(out.to_string())
}

/// Trains a small model on the toy graph and returns the loss curve and the
/// final score matrix.
pub fn train_json(pairs: &str, variant: &str, epochs: usize, seed: u64) -> Result<String, String> {
    let (m, n, pairs) = parse_pairs(pairs)?;
    let variant: Variant = variant.parse().map_err(|e: gvrec::Error| e.to_string())?;
    let k = pairs.len();
    let data = InteractionSet::from_indexed(m, n, pairs.clone(), vec![Split::Train; k]).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        dim: 8,
        hidden: 16,
        latent: 4,
        lr: 0.02,
        dropout: 0.0,
        batch_size: 16,
        mc_users: m,
        mc_items: n,
        vae_batch: m,
        val_fraction: 0.0,
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut model = Model::new(ablate(&base, variant), &data).map_err(|e| e.to_string())?;
    let mut curve = Vec::new();
    for _ in 0..epochs.min(500) {
        let s = model.train_epoch().map_err(|e| e.to_string())?;
        curve.push(json!({"epoch": s.epoch, "rec": s.loss.rec, "mc": s.loss.mc, "vae": s.loss.vae, "total": s.loss.total}));
    }
    let scorer = model.scorer().map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..m).collect();
    let scores = gvrec::eval::Scorer::score_users(&scorer, &all).map_err(|e| e.to_string())?;
    let observed: Vec<Value> = pairs.iter().map(|&(u, i)| json!([u, i])).collect();
    Ok(json!({
        "users": m,
        "items": n,
        "variant": variant.as_str(),
        "curve": curve,
        "scores": rows(&scores),
        "observed": observed,
    })
    .to_string())
}

/// Top-K ranking of one score row with Recall@K and NDCG@K.
pub fn metrics_json(scores: &str, exclude: &str, relevant: &str, k: usize) -> Result<String, String> {
    let scores: Vec<f64> = parse_list(scores)?;
    let mut exclude: Vec<usize> = parse_list(exclude)?;
    let mut relevant: Vec<usize> = parse_list(relevant)?;
    exclude.sort_unstable();
    exclude.dedup();
    relevant.sort_unstable();
    relevant.dedup();
    let ranked = rank_items(0, &scores, &exclude, k).map_err(|e| e.to_string())?;
    Ok(json!({
        "ranked": ranked.items,
        "short": ranked.short,
        "recall": recall_at_k(&ranked.items, &relevant, k),
        "ndcg": ndcg_at_k(&ranked.items, &relevant, k),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn propagate_toy(pairs: &str, layers: usize, dim: usize, seed: u64) -> Result<String, JsValue> {
    propagate_json(pairs, layers, dim, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn train_toy(pairs: &str, variant: &str, epochs: usize, seed: u64) -> Result<String, JsValue> {
    train_json(pairs, variant, epochs, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ranking_metrics(scores: &str, exclude: &str, relevant: &str, k: usize) -> Result<String, JsValue> {
    metrics_json(scores, exclude, relevant, k).map_err(|e| JsValue::from_str(&e))
}
