//! Pipeline behind the `gvrec` binary. Every subcommand is a plain function
//! so tests can drive it in-process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use gvrec::eval::{evaluate_users, groups_csv, heatmap_csv, sparsity_report, summarize, MetricReport};
use gvrec::ingest::{load_interactions, recognize, sparsity_groups, write_id_map, Format, InteractionSet, Split};
use gvrec::numeric::checkpoint::{hex, sha256};
use gvrec::numeric::{Checkpoint, Rng};
use gvrec::training::{ablate, History, Model, TrainConfig, Variant};
use gvrec::{Error, Result};

pub const SPLIT_FILE: &str = "split.txt";
pub const STATS_FILE: &str = "stats.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const RUN_MANIFEST: &str = "run.txt";

#[derive(Debug, Parser)]
#[command(name = "gvrec", version, about = "Graph recommender with similarity constraints and variational completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an interaction log, split it and write the prepared directory.
    Prepare(PrepareArgs),
    /// Train one model variant on a prepared directory.
    Train(TrainArgs),
    /// Score a checkpoint on the test split and write reports.
    Evaluate(EvaluateArgs),
    /// Train and evaluate all four ablation variants and compare them.
    Ablate(AblateArgs),
    /// Grid over the constraint and generative loss weights.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Raw interaction file.
    #[arg(long)]
    pub input: PathBuf,
    /// tsv-rating, csv-rating or pair-list.
    #[arg(long)]
    pub format: Format,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Ratings at or above this count as interactions. Defaults to the
    /// registry value for recognized datasets, else 1.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub min_train: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

/// Model hyperparameters. Precedence: defaults, then `--config`, then
/// `--set`, then the named flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set dim=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl ModelArgs {
    pub fn build(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(path) = &self.config {
            c.apply_text(&fs::read_to_string(path)?)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            c.set(k, v)?;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Prepared directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, history and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,40")]
    pub ks: Vec<usize>,
    /// Number of train-degree groups for the sparsity table.
    #[arg(long)]
    pub sparsity_groups: Option<usize>,
    /// Raw user ids for the heatmap export.
    #[arg(long, value_delimiter = ',')]
    pub heatmap_users: Vec<String>,
    /// Raw item ids for the heatmap export.
    #[arg(long, value_delimiter = ',')]
    pub heatmap_items: Vec<String>,
    /// Instead of explicit ids, pick this many random users and items that
    /// have train interactions.
    #[arg(long)]
    pub heatmap_sample: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds to average over; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1,0.5")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1,0.5")]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Flat `key = value` manifest.
#[derive(Debug, Default, Clone)]
pub struct Manifest(Vec<(String, String)>);

impl Manifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        Manifest(
            text.lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct Prepared {
    pub dir: PathBuf,
    pub data: InteractionSet,
    /// SHA-256 of the split manifest bytes.
    pub hash: [u8; 32],
}

pub fn prepare(args: &PrepareArgs) -> Result<Prepared> {
    let known = recognize(&args.input);
    let threshold = args
        .threshold
        .unwrap_or_else(|| known.map(|k| k.rating_threshold).unwrap_or(1.0));
    let raw = load_interactions(&args.input, args.format, threshold)?;
    let stats = raw.stats();
    log::info!(
        "loaded {} users, {} items, {} interactions",
        stats.users,
        stats.items,
        stats.interactions
    );
    if let Some(k) = known {
        let issues = k.mismatches(&stats);
        if issues.is_empty() {
            log::info!("statistics match the published {} figures", k.name);
        } else {
            log::warn!("{} statistics differ from published: {}", k.name, issues.join("; "));
        }
    }
    let data = raw.split(args.test_fraction, &Rng::new(args.seed), args.min_train)?;
    fs::create_dir_all(&args.out)?;
    let split_bytes = data.manifest_bytes();
    let hash = sha256(&split_bytes);
    fs::write(args.out.join(SPLIT_FILE), &split_bytes)?;
    let mut stats_text = stats.to_text();
    let _ = writeln!(
        stats_text,
        "after_split_users = {}\nafter_split_items = {}\ntrain = {}\ntest = {}",
        data.n_users(),
        data.n_items(),
        data.count(Split::Train),
        data.count(Split::Test)
    );
    if let Some(k) = known {
        let _ = writeln!(stats_text, "recognized = {}", k.name);
        for m in k.mismatches(&stats) {
            let _ = writeln!(stats_text, "mismatch = {m}");
        }
    }
    fs::write(args.out.join(STATS_FILE), stats_text)?;
    write_id_map(&args.out.join("users.txt"), data.users())?;
    write_id_map(&args.out.join("items.txt"), data.items())?;

    let mut m = Manifest::default();
    m.push("input", args.input.display());
    m.push("input_sha256", hex(&sha256(&fs::read(&args.input)?)));
    m.push("format", args.format);
    m.push("threshold", threshold);
    m.push("test_fraction", args.test_fraction);
    m.push("min_train", args.min_train);
    m.push("seed", args.seed);
    m.push("split", SPLIT_FILE);
    m.push("split_sha256", hex(&hash));
    m.push("stats", STATS_FILE);
    m.push("user_map", "users.txt");
    m.push("item_map", "items.txt");
    m.write(&args.out.join("prepare.txt"))?;
    Ok(Prepared {
        dir: args.out.clone(),
        data,
        hash,
    })
}

pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let path = dir.join(SPLIT_FILE);
    let bytes = fs::read(&path).map_err(|e| {
        Error::Config(format!(
            "{} is not a prepared directory ({e}); run `gvrec prepare` first",
            dir.display()
        ))
    })?;
    let data = InteractionSet::from_manifest(&path)?;
    Ok(Prepared {
        dir: dir.to_path_buf(),
        data,
        hash: sha256(&bytes),
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub checkpoint: PathBuf,
}

/// Trains `config` on `prepared` and writes checkpoint, history and manifest
/// into `out`. A failed run leaves `failure.txt` behind.
pub fn train_config(prepared: &Prepared, config: TrainConfig, variant: Variant, out: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let started = unix_now();
    let mut model = Model::new(config.clone(), &prepared.data)?;
    let fitted = model.fit(|row, s| {
        log::info!(
            "epoch {:>3}  rec {:.4}  mc {:.4}  vae {:.3}  val N@20 {:.4}  ({:.1}s)",
            row.epoch,
            row.loss.rec,
            row.loss.mc,
            row.loss.vae,
            row.val_ndcg20,
            s.seconds
        )
    });
    let history = match fitted {
        Ok(h) => h,
        Err(e) => {
            let mut diag = Manifest::default();
            diag.push("error", &e);
            diag.push("epoch", model.epoch);
            for p in model.store.params() {
                diag.push(format!("max_abs.{}", p.name), p.value.max_abs());
            }
            diag.push("config", "");
            let text = diag.to_text() + &config.to_text();
            fs::write(out.join("failure.txt"), text)?;
            return Err(e);
        }
    };
    let ckpt = model.to_checkpoint(prepared.hash);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let ckpt_bytes = ckpt.to_bytes();
    fs::write(&ckpt_path, &ckpt_bytes)?;
    fs::write(out.join(HISTORY_FILE), history.to_csv())?;

    let mut m = Manifest::default();
    m.push("command", "train");
    m.push("variant", variant);
    m.push("dataset", prepared.dir.join(SPLIT_FILE).display());
    m.push("dataset_sha256", hex(&prepared.hash));
    m.push("git_revision", git_revision());
    m.push("seed", config.seed);
    m.push("best_epoch", history.best_epoch);
    m.push("epochs_run", history.rows.len());
    m.push("best_val_ndcg20", format!("{:?}", history.best_val_ndcg20));
    m.push("checkpoint", ckpt_path.display());
    m.push("checkpoint_sha256", hex(&sha256(&ckpt_bytes)));
    m.push("history", out.join(HISTORY_FILE).display());
    m.push("started_unix", started);
    m.push("finished_unix", unix_now());
    for line in config.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.push(format!("config.{k}"), v);
        }
    }
    m.write(&out.join(RUN_MANIFEST))?;
    Ok(TrainOutcome {
        model,
        history,
        checkpoint: ckpt_path,
    })
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome> {
    let prepared = load_prepared(&args.data)?;
    let config = ablate(&args.model.build()?, args.variant);
    train_config(&prepared, config, args.variant, &args.out)
}

fn lookup(map: &gvrec::ingest::IdMap, raw: &[String], kind: &str) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    let mut unknown = Vec::new();
    for r in raw {
        match map.get(r) {
            Some(i) => idx.push(i),
            None => unknown.push(format!("{kind} {r}")),
        }
    }
    if unknown.is_empty() {
        Ok(idx)
    } else {
        Err(Error::UnknownIds(unknown.join(", ")))
    }
}

/// Metrics (and optional group and heatmap tables) for a trained model,
/// written into `out`.
pub fn evaluate_model(
    model: &Model,
    prepared: &Prepared,
    out: &Path,
    ks: &[usize],
    groups: Option<usize>,
    heatmap: Option<(Vec<usize>, Vec<usize>)>,
) -> Result<MetricReport> {
    fs::create_dir_all(out)?;
    let data = &prepared.data;
    let test = data.user_items(Split::Test);
    let scorer = model.scorer()?;
    let mut all_ks = ks.to_vec();
    if groups.is_some() && !all_ks.contains(&20) {
        all_ks.push(20);
    }
    let per_user = evaluate_users(&scorer, &model.train_items, &test, &all_ks)?;
    if per_user.is_empty() {
        return Err(Error::Eval("no user has a test item".into()));
    }
    let mut report = summarize(&per_user, ks);
    let mut written = vec!["metrics.txt", "metrics.csv", "metrics.json"];
    if let Some(n) = groups {
        let g = sparsity_groups(data, n)?;
        let k20 = all_ks.iter().position(|&k| k == 20).expect("added above");
        report.groups = sparsity_report(&per_user, k20, &g);
        fs::write(out.join("groups.csv"), groups_csv(&report.groups))?;
        written.push("groups.csv");
    }
    if let Some((users, items)) = heatmap {
        let ul: Vec<String> = users.iter().map(|&u| data.users().raw(u).to_string()).collect();
        let il: Vec<String> = items.iter().map(|&i| data.items().raw(i).to_string()).collect();
        fs::write(out.join("heatmap.csv"), heatmap_csv(&scorer, &users, &items, &ul, &il)?)?;
        written.push("heatmap.csv");
    }
    fs::write(out.join("metrics.txt"), report.to_table())?;
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    fs::write(out.join("metrics.json"), report.to_json())?;

    let mut m = Manifest::default();
    m.push("command", "evaluate");
    m.push("dataset", prepared.dir.join(SPLIT_FILE).display());
    m.push("dataset_sha256", hex(&prepared.hash));
    m.push("ks", ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
    for f in written {
        m.push(format!("report.{}", f.replace('.', "_")), out.join(f).display());
    }
    m.write(&out.join("evaluate.txt"))?;
    Ok(report)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    let prepared = load_prepared(&args.data)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if ckpt.dataset_hash != prepared.hash {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on split {} but {} has split {}; refusing to evaluate",
            hex(&ckpt.dataset_hash),
            args.data.display(),
            hex(&prepared.hash)
        )));
    }
    let model = Model::from_checkpoint(&ckpt, &prepared.data)?;
    let heatmap = if let Some(n) = args.heatmap_sample {
        let mut rng = Rng::new(ckpt.seed).split(0x4ea7);
        let users: Vec<usize> = (0..model.n_users()).filter(|&u| !model.train_items[u].is_empty()).collect();
        let mut items: Vec<usize> = model.train_items.iter().flatten().copied().collect();
        items.sort_unstable();
        items.dedup();
        let pick = |pool: &[usize], rng: &mut Rng| -> Vec<usize> {
            let mut v: Vec<usize> = rng.choose_distinct(pool.len(), n).into_iter().map(|k| pool[k]).collect();
            v.sort_unstable();
            v
        };
        let u = pick(&users, &mut rng);
        Some((u, pick(&items, &mut rng)))
    } else if !args.heatmap_users.is_empty() || !args.heatmap_items.is_empty() {
        let data = &prepared.data;
        Some((
            lookup(data.users(), &args.heatmap_users, "user")?,
            lookup(data.items(), &args.heatmap_items, "item")?,
        ))
    } else {
        None
    };
    evaluate_model(&model, &prepared, &args.out, &args.ks, args.sparsity_groups, heatmap)
}

/// Mean of `N@20`/`R@20` rows by label.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub seed: Option<u64>,
    pub recall20: f64,
    pub ndcg20: f64,
    pub ndcg40: f64,
}

fn comparison_csv(header: &str, rows: &[ComparisonRow]) -> String {
    let mut s = format!("{header},seed,R@20,N@20,N@40\n");
    for r in rows {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into());
        let _ = writeln!(s, "{},{seed},{:?},{:?},{:?}", r.label, r.recall20, r.ndcg20, r.ndcg40);
    }
    s
}

fn means(label: &str, rows: &[ComparisonRow]) -> ComparisonRow {
    let n = rows.len().max(1) as f64;
    ComparisonRow {
        label: label.to_string(),
        seed: None,
        recall20: rows.iter().map(|r| r.recall20).sum::<f64>() / n,
        ndcg20: rows.iter().map(|r| r.ndcg20).sum::<f64>() / n,
        ndcg40: rows.iter().map(|r| r.ndcg40).sum::<f64>() / n,
    }
}

fn run_one(prepared: &Prepared, config: TrainConfig, variant: Variant, out: &Path, label: &str) -> Result<ComparisonRow> {
    let seed = config.seed;
    let outcome = train_config(prepared, config, variant, out)?;
    let rep = evaluate_model(&outcome.model, prepared, out, &[20, 40], None, None)?;
    Ok(ComparisonRow {
        label: label.to_string(),
        seed: Some(seed),
        recall20: rep.recall_at(20).expect("K=20 evaluated"),
        ndcg20: rep.ndcg_at(20).expect("K=20 evaluated"),
        ndcg40: rep.ndcg_at(40).expect("K=40 evaluated"),
    })
}

/// Per-seed rows followed by one mean row per variant.
pub fn run_ablation(args: &AblateArgs) -> Result<Vec<ComparisonRow>> {
    let prepared = load_prepared(&args.data)?;
    let base = args.model.build()?;
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for v in Variant::ALL {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let cfg = ablate(&TrainConfig { seed, ..base.clone() }, v);
            let dir = args.out.join(format!("{v}-s{seed}"));
            log::info!("ablation {v}, seed {seed}");
            per_seed.push(run_one(&prepared, cfg, v, &dir, v.as_str())?);
        }
        summary.push(means(v.as_str(), &per_seed));
        rows.extend(per_seed);
    }
    rows.extend(summary);
    fs::write(args.out.join("ablation.csv"), comparison_csv("variant", &rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub beta: f64,
    pub runs: Vec<ComparisonRow>,
    pub mean: ComparisonRow,
}

/// `N@20` grid with one row per lambda and one column per beta.
pub fn sweep_grid_csv(lambdas: &[f64], betas: &[f64], cells: &[SweepCell]) -> String {
    let mut s = String::from("lambda");
    for b in betas {
        let _ = write!(s, ",beta={b}");
    }
    s.push('\n');
    for &l in lambdas {
        let _ = write!(s, "{l}");
        for &b in betas {
            match cells.iter().find(|c| c.lambda == l && c.beta == b) {
                Some(c) => {
                    let _ = write!(s, ",{:?}", c.mean.ndcg20);
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn run_sweep(args: &SweepArgs) -> Result<Vec<SweepCell>> {
    let prepared = load_prepared(&args.data)?;
    let base = args.model.build()?;
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let mut cells = Vec::new();
    let mut runs_csv = Vec::new();
    for &lambda in &args.lambdas {
        for &beta in &args.betas {
            let mut runs = Vec::new();
            for &seed in &seeds {
                let cfg = TrainConfig { lambda, beta, seed, ..base.clone() };
                let label = format!("l{lambda}-b{beta}");
                let dir = args.out.join(format!("{label}-s{seed}"));
                log::info!("sweep lambda {lambda}, beta {beta}, seed {seed}");
                runs.push(run_one(&prepared, cfg, Variant::Full, &dir, &label)?);
            }
            let mean = means(&format!("l{lambda}-b{beta}"), &runs);
            runs_csv.extend(runs.iter().cloned());
            runs_csv.push(mean.clone());
            cells.push(SweepCell { lambda, beta, runs, mean });
        }
    }
    fs::write(args.out.join("sweep_runs.csv"), comparison_csv("setting", &runs_csv))?;
    fs::write(args.out.join("sweep.csv"), sweep_grid_csv(&args.lambdas, &args.betas, &cells))?;
    Ok(cells)
}

/// Runs one parsed command, printing its main result to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let p = prepare(&a)?;
            print!("{}", fs::read_to_string(p.dir.join(STATS_FILE))?);
        }
        Command::Train(a) => {
            let o = train(&a)?;
            println!(
                "best epoch {} (validation N@20 {:.4}); checkpoint {}",
                o.history.best_epoch,
                o.history.best_val_ndcg20,
                o.checkpoint.display()
            );
        }
        Command::Evaluate(a) => {
            let rep = evaluate(&a)?;
            print!("{}", rep.to_table());
        }
        Command::Ablate(a) => {
            let rows = run_ablation(&a)?;
            println!("{:<8} {:>5} {:>8} {:>8} {:>8}", "variant", "seed", "R@20", "N@20", "N@40");
            for r in rows {
                let seed = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into());
                println!("{:<8} {seed:>5} {:>8.4} {:>8.4} {:>8.4}", r.label, r.recall20, r.ndcg20, r.ndcg40);
            }
        }
        Command::Sweep(a) => {
            let cells = run_sweep(&a)?;
            print!("{}", sweep_grid_csv(&a.lambdas, &a.betas, &cells));
        }
    }
    Ok(())
}
