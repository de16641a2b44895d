//! Interaction log loading, contiguous id maps, per-user holdout splits and
//! the binary implicit-feedback matrix.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{Rng, SparseMatrix};

/// Input file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `user<TAB>item<TAB>rating<TAB>timestamp` (MovieLens `u.data`).
    TsvRating,
    /// `user,item,rating,timestamp`, optional header line.
    CsvRating,
    /// `user item`, whitespace separated, one pair per line.
    PairList,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv-rating" => Ok(Format::TsvRating),
            "csv-rating" => Ok(Format::CsvRating),
            "pair-list" => Ok(Format::PairList),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected tsv-rating, csv-rating or pair-list)"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::TsvRating => "tsv-rating",
            Format::CsvRating => "csv-rating",
            Format::PairList => "pair-list",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split tag `{other}`"))),
        }
    }
}

/// Bidirectional map between raw keys and contiguous indices, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(key.to_string());
        self.index.insert(key.to_string(), i);
        i
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn raw(&self, idx: usize) -> &str {
        &self.raw[idx]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.raw
    }
}

/// Deduplicated implicit-feedback pairs with split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    users: IdMap,
    items: IdMap,
    pairs: Vec<(usize, usize)>,
    tags: Vec<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

impl DatasetStats {
    /// Density as a percentage rounded to three decimals.
    pub fn density_percent(&self) -> String {
        format!("{:.3}", self.density * 100.0)
    }

    pub fn to_text(&self) -> String {
        format!(
            "users = {}\nitems = {}\ninteractions = {}\ndensity_percent = {}\n",
            self.users,
            self.items,
            self.interactions,
            self.density_percent()
        )
    }
}

impl InteractionSet {
    /// Builds a set from raw-key pairs, all tagged train. Duplicate pairs collapse.
    pub fn from_raw_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (u, i) in pairs {
            let (u, i) = (users.intern(u), items.intern(i));
            if seen.insert((u, i)) {
                out.push((u, i));
            }
        }
        let n = out.len();
        Self {
            users,
            items,
            pairs: out,
            tags: vec![Split::Train; n],
        }
    }

    /// Builds directly from index pairs with tags. Used by tests and the demo.
    pub fn from_indexed(
        n_users: usize,
        n_items: usize,
        pairs: Vec<(usize, usize)>,
        tags: Vec<Split>,
    ) -> Result<Self> {
        if pairs.len() != tags.len() {
            return Err(Error::Config("pairs and tags differ in length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (&(u, i), &t) in pairs.iter().zip(&tags) {
            if u >= n_users || i >= n_items {
                return Err(Error::Config(format!("pair ({u}, {i}) out of range")));
            }
            if !seen.insert((u, i, t)) {
                return Err(Error::Config(format!("duplicate pair ({u}, {i})")));
            }
        }
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        for u in 0..n_users {
            users.intern(&u.to_string());
        }
        for i in 0..n_items {
            items.intern(&i.to_string());
        }
        Ok(Self {
            users,
            items,
            pairs,
            tags,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn tags(&self) -> &[Split] {
        &self.tags
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs
            .iter()
            .zip(&self.tags)
            .filter(move |(_, &t)| t == split)
            .map(|(&p, _)| p)
    }

    pub fn count(&self, split: Split) -> usize {
        self.tags.iter().filter(|&&t| t == split).count()
    }

    pub fn stats(&self) -> DatasetStats {
        let (m, n, c) = (self.n_users(), self.n_items(), self.len());
        DatasetStats {
            users: m,
            items: n,
            interactions: c,
            density: if m * n == 0 {
                0.0
            } else {
                c as f64 / (m as f64 * n as f64)
            },
        }
    }

    /// Per-user item lists for one split.
    pub fn user_items(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for (u, i) in self.pairs_in(split) {
            out[u].push(i);
        }
        for v in &mut out {
            v.sort_unstable();
        }
        out
    }

    /// Per-user random holdout: `floor(test_fraction * degree)` pairs per user
    /// go to test, capped so that at least `min_train_per_user` stay in train.
    ///
    /// Each user's draws come from its own stream of `rng`, so the result does
    /// not depend on iteration order. Test pairs whose item has no remaining
    /// train pair are dropped (and the item removed from the catalogue).
    pub fn split(&self, test_fraction: f64, rng: &Rng, min_train_per_user: usize) -> Result<Self> {
        let tags = self.holdout_tags(test_fraction, rng, min_train_per_user)?;
        let tagged = Self {
            users: self.users.clone(),
            items: self.items.clone(),
            pairs: self.pairs.clone(),
            tags,
        };
        Ok(tagged.drop_test_only_items())
    }

    /// The tagging step of [`InteractionSet::split`], without the item cleanup.
    pub fn holdout_tags(
        &self,
        test_fraction: f64,
        rng: &Rng,
        min_train_per_user: usize,
    ) -> Result<Vec<Split>> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let min_train = min_train_per_user.max(1);
        let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); self.n_users()];
        for (k, &(u, _)) in self.pairs.iter().enumerate() {
            by_user[u].push(k);
        }
        let mut tags = vec![Split::Train; self.pairs.len()];
        for (u, ks) in by_user.iter_mut().enumerate() {
            let deg = ks.len();
            let n_test = ((test_fraction * deg as f64).floor() as usize)
                .min(deg.saturating_sub(min_train));
            if n_test == 0 {
                continue;
            }
            let mut stream = rng.split(u as u64);
            stream.shuffle(ks);
            for &k in &ks[..n_test] {
                tags[k] = Split::Test;
            }
        }
        Ok(tags)
    }

    /// Removes items that have no train interaction, together with their test pairs.
    pub fn drop_test_only_items(self) -> Self {
        let mut has_train = vec![false; self.n_items()];
        for (_, i) in self.pairs_in(Split::Train) {
            has_train[i] = true;
        }
        let dropped = has_train.iter().filter(|&&b| !b).count();
        if dropped == 0 {
            return self;
        }
        log::warn!("dropping {dropped} items that appear only in the test split");
        let mut items = IdMap::default();
        let mut remap = vec![usize::MAX; self.n_items()];
        for (i, keep) in has_train.iter().enumerate() {
            if *keep {
                remap[i] = items.intern(self.items.raw(i));
            }
        }
        let mut pairs = Vec::with_capacity(self.pairs.len());
        let mut tags = Vec::with_capacity(self.pairs.len());
        for (&(u, i), &t) in self.pairs.iter().zip(&self.tags) {
            if remap[i] != usize::MAX {
                pairs.push((u, remap[i]));
                tags.push(t);
            }
        }
        Self {
            users: self.users,
            items,
            pairs,
            tags,
        }
    }

    /// Writes `user item split` rows with raw keys, in pair order.
    pub fn write_manifest(&self, mut w: impl Write) -> Result<()> {
        for (&(u, i), t) in self.pairs.iter().zip(&self.tags) {
            writeln!(w, "{} {} {}", self.users.raw(u), self.items.raw(i), t.as_str())?;
        }
        Ok(())
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_manifest(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a split manifest back into a tagged set.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let rows = read_manifest(path)?;
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let mut pairs = Vec::with_capacity(rows.len());
        let mut tags = Vec::with_capacity(rows.len());
        for (u, i, t) in rows {
            pairs.push((users.intern(&u), items.intern(&i)));
            tags.push(t);
        }
        if pairs.is_empty() {
            return Err(Error::EmptyDataset(path.display().to_string()));
        }
        Ok(Self {
            users,
            items,
            pairs,
            tags,
        })
    }

    /// Keeps only the pairs of one split, retagged as train. Id maps are shared.
    pub fn restrict(&self, split: Split) -> Self {
        let pairs: Vec<_> = self.pairs_in(split).collect();
        let n = pairs.len();
        Self {
            users: self.users.clone(),
            items: self.items.clone(),
            pairs,
            tags: vec![Split::Train; n],
        }
    }

    /// Binary `M x N` matrix with ones at the pairs of `split`.
    pub fn build_matrix(&self, split: Split) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.n_users(),
            self.n_items(),
            self.pairs_in(split).map(|(u, i)| (u, i, 1.0)),
        )
        .expect("pairs are in range and deduplicated")
    }
}

fn read_manifest(path: &Path) -> Result<Vec<(String, String, Split)>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "expected `user item split`".into(),
            });
        }
        let tag = parts[2].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: format!("unknown split tag `{}`", parts[2]),
        })?;
        out.push((parts[0].to_string(), parts[1].to_string(), tag));
    }
    Ok(out)
}

/// Loads an interaction log. Ratings at or above `rating_threshold` become
/// implicit positives; other rows are ignored. Pair lists have no ratings and
/// keep every row.
pub fn load_interactions(path: &Path, format: Format, rating_threshold: f64) -> Result<InteractionSet> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut rows: Vec<(String, String)> = Vec::new();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            Format::TsvRating => line.split('\t').collect(),
            Format::CsvRating => line.split(',').map(str::trim).collect(),
            Format::PairList => line.split_whitespace().collect(),
        };
        let need = match format {
            Format::PairList => 2,
            _ => 3,
        };
        if fields.len() < need || fields[..need].iter().any(|f| f.is_empty()) {
            return Err(perr(
                lineno,
                format!("expected at least {need} fields for {format}, got {}", fields.len()),
            ));
        }
        if format == Format::PairList {
            if fields.len() != 2 {
                return Err(perr(lineno, format!("expected 2 fields, got {}", fields.len())));
            }
            rows.push((fields[0].to_string(), fields[1].to_string()));
            continue;
        }
        let rating: f64 = match fields[2].parse() {
            Ok(r) => r,
            Err(_) if lineno == 1 && format == Format::CsvRating => continue, // header
            Err(_) => return Err(perr(lineno, format!("invalid rating `{}`", fields[2]))),
        };
        if !rating.is_finite() {
            return Err(perr(lineno, format!("invalid rating `{}`", fields[2])));
        }
        if rating >= rating_threshold {
            rows.push((fields[0].to_string(), fields[1].to_string()));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no interactions at threshold {rating_threshold}",
            path.display()
        )));
    }
    Ok(InteractionSet::from_raw_pairs(
        rows.iter().map(|(u, i)| (u.as_str(), i.as_str())),
    ))
}

/// Test users bucketed by train degree.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityGroups {
    /// Group of each user, `None` for users without test pairs.
    pub group_of: Vec<Option<usize>>,
    pub n_groups: usize,
    /// Smallest and largest train degree in each group.
    pub degree_range: Vec<(usize, usize)>,
}

impl SparsityGroups {
    pub fn members(&self, g: usize) -> Vec<usize> {
        self.group_of
            .iter()
            .enumerate()
            .filter(|(_, x)| **x == Some(g))
            .map(|(u, _)| u)
            .collect()
    }
}

/// Quantile groups over train degree for users that have test pairs.
pub fn sparsity_groups(data: &InteractionSet, n_groups: usize) -> Result<SparsityGroups> {
    if n_groups < 2 {
        return Err(Error::Config(format!("need at least 2 groups, got {n_groups}")));
    }
    let mut train_deg = vec![0usize; data.n_users()];
    let mut has_test = vec![false; data.n_users()];
    for (&(u, _), &t) in data.pairs().iter().zip(data.tags()) {
        match t {
            Split::Train => train_deg[u] += 1,
            Split::Test => has_test[u] = true,
        }
    }
    let users: Vec<usize> = (0..data.n_users()).filter(|&u| has_test[u]).collect();
    let degrees: Vec<usize> = users.iter().map(|&u| train_deg[u]).collect();
    let (groups, n, ranges) = quantile_groups(&degrees, n_groups);
    let mut group_of = vec![None; data.n_users()];
    for (&u, g) in users.iter().zip(groups) {
        group_of[u] = Some(g);
    }
    Ok(SparsityGroups {
        group_of,
        n_groups: n,
        degree_range: ranges,
    })
}

/// Assigns each value a quantile bucket. Equal values always share a bucket
/// and empty buckets are merged away, so fewer than `n_groups` may result.
pub fn quantile_groups(values: &[usize], n_groups: usize) -> (Vec<usize>, usize, Vec<(usize, usize)>) {
    let n = values.len();
    if n == 0 {
        return (Vec::new(), 0, Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| (values[k], k));
    let mut raw_group = vec![0usize; n];
    let mut pos = 0;
    while pos < n {
        let v = values[order[pos]];
        let g = pos * n_groups / n;
        let mut end = pos;
        while end < n && values[order[end]] == v {
            raw_group[order[end]] = g;
            end += 1;
        }
        pos = end;
    }
    let mut used: Vec<usize> = raw_group.clone();
    used.sort_unstable();
    used.dedup();
    let compact: HashMap<usize, usize> = used.iter().enumerate().map(|(k, &g)| (g, k)).collect();
    let groups: Vec<usize> = raw_group.iter().map(|g| compact[g]).collect();
    let mut ranges = vec![(usize::MAX, 0usize); used.len()];
    for (k, &g) in groups.iter().enumerate() {
        ranges[g].0 = ranges[g].0.min(values[k]);
        ranges[g].1 = ranges[g].1.max(values[k]);
    }
    (groups, used.len(), ranges)
}

/// A dataset whose published statistics are known.
#[derive(Debug, Clone, Copy)]
pub struct KnownDataset {
    pub name: &'static str,
    pub hints: &'static [&'static str],
    pub format: Format,
    pub rating_threshold: f64,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Percent, three decimals.
    pub density_percent: &'static str,
}

pub const KNOWN_DATASETS: &[KnownDataset] = &[
    KnownDataset {
        name: "ML-100K",
        hints: &["ml-100k", "ml100k", "movielens100k", "u.data"],
        format: Format::TsvRating,
        rating_threshold: 4.0,
        users: 943,
        items: 1674,
        interactions: 55_375,
        density_percent: "3.507",
    },
    KnownDataset {
        name: "ML-1M",
        hints: &["ml-1m", "ml1m", "movielens1m"],
        format: Format::TsvRating,
        rating_threshold: 4.0,
        users: 6022,
        items: 3043,
        interactions: 995_154,
        density_percent: "5.431",
    },
    KnownDataset {
        name: "Yelp",
        hints: &["yelp"],
        format: Format::PairList,
        rating_threshold: 1.0,
        users: 31_668,
        items: 38_048,
        interactions: 1_561_406,
        density_percent: "0.130",
    },
    KnownDataset {
        name: "Amazon-Electronics",
        hints: &["amazon", "electronics"],
        format: Format::CsvRating,
        rating_threshold: 1.0,
        users: 1435,
        items: 1522,
        interactions: 35_931,
        density_percent: "1.645",
    },
];

/// Looks a path up in the registry by file or directory name.
pub fn recognize(path: &Path) -> Option<&'static KnownDataset> {
    let lower = path.to_string_lossy().to_lowercase();
    KNOWN_DATASETS
        .iter()
        .find(|d| d.hints.iter().any(|h| lower.contains(h)))
}

impl KnownDataset {
    /// Human-readable mismatches between loaded and published statistics.
    pub fn mismatches(&self, stats: &DatasetStats) -> Vec<String> {
        let mut out = Vec::new();
        if stats.users != self.users {
            out.push(format!("users {} (published {})", stats.users, self.users));
        }
        if stats.items != self.items {
            out.push(format!("items {} (published {})", stats.items, self.items));
        }
        if stats.interactions != self.interactions {
            out.push(format!(
                "interactions {} (published {})",
                stats.interactions, self.interactions
            ));
        }
        if stats.density_percent() != self.density_percent {
            out.push(format!(
                "density {}% (published {}%)",
                stats.density_percent(),
                self.density_percent
            ));
        }
        out
    }
}

/// Writes `index raw_key` lines.
pub fn write_id_map(path: &PathBuf, map: &IdMap) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, k) in map.keys().iter().enumerate() {
        writeln!(f, "{i} {k}")?;
    }
    f.flush()?;
    Ok(())
}
