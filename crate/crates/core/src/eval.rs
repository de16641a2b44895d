//! Full-catalogue top-K ranking, Recall@K / NDCG@K, sparsity-group
//! breakdowns and score-matrix export.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::SparsityGroups;
use crate::numeric::DenseMatrix;

/// Anything that can score every item for a set of users.
pub trait Scorer {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// `|users| x n_items` score rows. Higher is better.
    fn score_users(&self, users: &[usize]) -> Result<DenseMatrix>;
}

/// Plain score matrix, mostly useful for tests and oracles.
impl Scorer for DenseMatrix {
    fn n_users(&self) -> usize {
        self.rows()
    }

    fn n_items(&self) -> usize {
        self.cols()
    }

    fn score_users(&self, users: &[usize]) -> Result<DenseMatrix> {
        Ok(self.select_rows(users))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Fewer than K items were available after exclusion.
    pub short: bool,
}

fn by_score_then_id(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Top-`k` items by descending score, skipping `exclude` (sorted ascending).
/// Ties go to the smaller item id.
pub fn rank_items(user: usize, scores: &[f64], exclude: &[usize], k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Eval("K must be at least 1".into()));
    }
    let mut cand: Vec<usize> = Vec::with_capacity(scores.len());
    let mut ex = exclude.iter().peekable();
    for i in 0..scores.len() {
        while ex.peek().is_some_and(|&&e| e < i) {
            ex.next();
        }
        if ex.peek() == Some(&&i) {
            continue;
        }
        cand.push(i);
    }
    let cmp = by_score_then_id(scores);
    let short = cand.len() < k;
    if !short && cand.len() > k {
        cand.select_nth_unstable_by(k - 1, &cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(&cmp);
    let s = cand.iter().map(|&i| scores[i]).collect();
    Ok(RankedList {
        user,
        items: cand,
        scores: s,
        short,
    })
}

/// `|top-K ∩ relevant| / |relevant|`; `None` when `relevant` is empty.
/// `relevant` must be sorted.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with `log2(position + 1)` discounts; the ideal DCG
/// places `min(k, |relevant|)` hits at the top. `relevant` must be sorted.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(pos, _)| discount(pos))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(discount).sum();
    Some(dcg / idcg)
}

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 2) as f64).log2()
}

/// Per-user metrics, one entry per evaluated user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    /// Same order as the requested K list.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub group_id: usize,
    pub user_count: usize,
    pub ndcg20: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users: usize,
    pub groups: Vec<GroupRow>,
}

const EVAL_CHUNK: usize = 256;

/// Scores users in chunks and computes Recall/NDCG at every K for users with
/// at least one relevant item. `exclude` and `relevant` are per-user sorted lists.
pub fn evaluate_users(
    scorer: &dyn Scorer,
    exclude: &[Vec<usize>],
    relevant: &[Vec<usize>],
    ks: &[usize],
) -> Result<Vec<UserMetrics>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Eval(format!("invalid K list {ks:?}")));
    }
    if exclude.len() != scorer.n_users() || relevant.len() != scorer.n_users() {
        return Err(Error::Eval(format!(
            "{} users in model, {} exclusion lists, {} relevance lists",
            scorer.n_users(),
            exclude.len(),
            relevant.len()
        )));
    }
    let users: Vec<usize> = (0..relevant.len()).filter(|&u| !relevant[u].is_empty()).collect();
    let kmax = *ks.iter().max().expect("nonempty");
    let mut out = Vec::with_capacity(users.len());
    for chunk in users.chunks(EVAL_CHUNK) {
        let scores = scorer.score_users(chunk)?;
        for (row, &u) in chunk.iter().enumerate() {
            let ranked = rank_items(u, scores.row(row), &exclude[u], kmax)?;
            let rel = &relevant[u];
            out.push(UserMetrics {
                user: u,
                recall: ks.iter().map(|&k| recall_at_k(&ranked.items, rel, k).unwrap()).collect(),
                ndcg: ks.iter().map(|&k| ndcg_at_k(&ranked.items, rel, k).unwrap()).collect(),
            });
        }
    }
    Ok(out)
}

/// Mean metrics over users with at least one test item.
pub fn evaluate(
    scorer: &dyn Scorer,
    exclude: &[Vec<usize>],
    test: &[Vec<usize>],
    ks: &[usize],
) -> Result<MetricReport> {
    let per_user = evaluate_users(scorer, exclude, test, ks)?;
    if per_user.is_empty() {
        return Err(Error::Eval("no user has a test item".into()));
    }
    Ok(summarize(&per_user, ks))
}

pub fn summarize(per_user: &[UserMetrics], ks: &[usize]) -> MetricReport {
    let n = per_user.len().max(1) as f64;
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    MetricReport {
        ks: ks.to_vec(),
        recall: (0..ks.len()).map(|j| mean(&|m| m.recall[j])).collect(),
        ndcg: (0..ks.len()).map(|j| mean(&|m| m.ndcg[j])).collect(),
        n_users: per_user.len(),
        groups: Vec::new(),
    }
}

/// Mean NDCG@20 per sparsity group. `per_user` must have been computed with
/// 20 in its K list, at position `k20`.
pub fn sparsity_report(per_user: &[UserMetrics], k20: usize, groups: &SparsityGroups) -> Vec<GroupRow> {
    let mut sums = vec![0.0; groups.n_groups];
    let mut counts = vec![0usize; groups.n_groups];
    for m in per_user {
        if let Some(g) = groups.group_of[m.user] {
            sums[g] += m.ndcg[k20];
            counts[g] += 1;
        }
    }
    (0..groups.n_groups)
        .map(|g| GroupRow {
            group_id: g,
            user_count: counts[g],
            ndcg20: (counts[g] > 0).then(|| sums[g] / counts[g] as f64),
        })
        .collect()
}

impl MetricReport {
    fn metric_columns(&self) -> Vec<(String, f64)> {
        let mut cols = Vec::new();
        for (j, k) in self.ks.iter().enumerate() {
            cols.push((format!("R@{k}"), self.recall[j]));
        }
        for (j, k) in self.ks.iter().enumerate() {
            cols.push((format!("N@{k}"), self.ndcg[j]));
        }
        cols
    }

    /// Value of `N@k`, if `k` was evaluated.
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.ndcg[j])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.recall[j])
    }

    pub fn to_table(&self) -> String {
        let cols = self.metric_columns();
        let mut s = String::new();
        for (name, _) in &cols {
            let _ = write!(s, "{name:>9}");
        }
        s.push('\n');
        for (_, v) in &cols {
            let _ = write!(s, "{v:>9.4}");
        }
        let _ = writeln!(s, "\nusers evaluated: {}", self.n_users);
        if !self.groups.is_empty() {
            s.push_str("\ngroup  users  N@20\n");
            for g in &self.groups {
                match g.ndcg20 {
                    Some(v) => {
                        let _ = writeln!(s, "{:>5}  {:>5}  {v:.4}", g.group_id, g.user_count);
                    }
                    None => {
                        let _ = writeln!(s, "{:>5}  {:>5}  -", g.group_id, g.user_count);
                    }
                }
            }
        }
        s
    }

    /// Header plus one row; full precision so reports compare bitwise.
    pub fn to_csv(&self) -> String {
        let cols = self.metric_columns();
        let header: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
        let values: Vec<String> = cols.iter().map(|(_, v)| format!("{v:?}")).collect();
        format!("{},users\n{},{}\n", header.join(","), values.join(","), self.n_users)
    }

    pub fn to_json(&self) -> String {
        let mut metrics = serde_json::Map::new();
        for (name, v) in self.metric_columns() {
            metrics.insert(name, serde_json::json!(v));
        }
        let groups: Vec<_> = self
            .groups
            .iter()
            .map(|g| serde_json::json!({"group_id": g.group_id, "user_count": g.user_count, "ndcg20": g.ndcg20}))
            .collect();
        let doc = serde_json::json!({
            "ks": self.ks,
            "metrics": metrics,
            "users": self.n_users,
            "groups": groups,
        });
        serde_json::to_string_pretty(&doc).expect("plain values serialize") + "\n"
    }
}

pub fn groups_csv(rows: &[GroupRow]) -> String {
    let mut s = String::from("group_id,user_count,ndcg20\n");
    for g in rows {
        match g.ndcg20 {
            Some(v) => {
                let _ = writeln!(s, "{},{},{v:?}", g.group_id, g.user_count);
            }
            None => {
                let _ = writeln!(s, "{},{},", g.group_id, g.user_count);
            }
        }
    }
    s
}

/// Score submatrix for the given user and item indices as CSV: a header of
/// item labels, then one row per user.
pub fn heatmap_csv(
    scorer: &dyn Scorer,
    users: &[usize],
    items: &[usize],
    user_labels: &[String],
    item_labels: &[String],
) -> Result<String> {
    let mut unknown: Vec<String> = users
        .iter()
        .filter(|&&u| u >= scorer.n_users())
        .map(|u| format!("user {u}"))
        .collect();
    unknown.extend(
        items
            .iter()
            .filter(|&&i| i >= scorer.n_items())
            .map(|i| format!("item {i}")),
    );
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown.join(", ")));
    }
    let scores = scorer.score_users(users)?;
    let mut s = String::from("user");
    for l in item_labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (r, label) in user_labels.iter().enumerate() {
        s.push_str(label);
        for &i in items {
            let _ = write!(s, ",{:?}", scores.get(r, i));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes [`heatmap_csv`] to `path`, labelling rows and columns with indices.
pub fn export_heatmap(scorer: &dyn Scorer, users: &[usize], items: &[usize], path: &Path) -> Result<()> {
    let ul: Vec<String> = users.iter().map(|u| u.to_string()).collect();
    let il: Vec<String> = items.iter().map(|i| i.to_string()).collect();
    std::fs::write(path, heatmap_csv(scorer, users, items, &ul, &il)?)?;
    Ok(())
}
