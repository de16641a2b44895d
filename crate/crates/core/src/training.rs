//! Objective assembly, the epoch loop with early stopping, checkpoints and
//! ablation switches.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::eval::{evaluate_users, Scorer};
use crate::generative::{
    eval_logits, vae_loss, wasserstein_align, Decoder, Encoder, GateUnit, VaeBatch, VaeWeights,
};
use crate::graphconv::{build_adjacency, pool, propagate, propagate_pool_backward, split_nodes, BipartiteGraph};
use crate::highorder::{constraint_loss, cooccurrence};
use crate::ingest::{InteractionSet, Split};
use crate::numeric::checkpoint::sha256;
use crate::numeric::{
    dot, finite_diff_check, gemm, glorot_bound, sigmoid, softplus, AdamConfig, Checkpoint, Coords, DenseMatrix,
    ParamId, ParamStore, Rng, SparseMatrix, Trans,
};

// Disjoint stream keys for `Rng::split`.
const STREAM_INIT: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const STREAM_EPOCH: u64 = 1 << 32;

/// Which matrix ranks items at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreSource {
    /// Decoder when the generative module is active, latent ratings otherwise.
    Auto,
    Decoder,
    Latent,
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreSource::Auto => "auto",
            ScoreSource::Decoder => "decoder",
            ScoreSource::Latent => "latent",
        })
    }
}

impl FromStr for ScoreSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ScoreSource::Auto),
            "decoder" => Ok(ScoreSource::Decoder),
            "latent" => Ok(ScoreSource::Latent),
            _ => Err(Error::Config(format!("unknown score source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub latent: usize,
    pub dropout: f64,
    pub lr: f64,
    pub lambda: f64,
    pub beta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub seed: u64,
    pub use_vae: bool,
    pub use_fm: bool,
    /// Users and items sampled per batch for the similarity constraint.
    pub mc_users: usize,
    pub mc_items: usize,
    /// Users per batch in the generative term.
    pub vae_batch: usize,
    pub align_weight: f64,
    pub val_fraction: f64,
    pub score: ScoreSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 2,
            hidden: 200,
            latent: 64,
            dropout: 0.2,
            lr: 1e-3,
            lambda: 0.1,
            beta: 0.1,
            max_epochs: 100,
            patience: 10,
            batch_size: 1024,
            negatives: 1,
            seed: 2024,
            use_vae: true,
            use_fm: true,
            mc_users: 256,
            mc_items: 256,
            vae_batch: 128,
            align_weight: 1.0,
            val_fraction: 0.1,
            score: ScoreSource::Auto,
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dim" => self.dim = parse_field(key, v)?,
            "layers" => self.layers = parse_field(key, v)?,
            "hidden" => self.hidden = parse_field(key, v)?,
            "latent" => self.latent = parse_field(key, v)?,
            "dropout" => self.dropout = parse_field(key, v)?,
            "lr" => self.lr = parse_field(key, v)?,
            "lambda" => self.lambda = parse_field(key, v)?,
            "beta" => self.beta = parse_field(key, v)?,
            "max_epochs" => self.max_epochs = parse_field(key, v)?,
            "patience" => self.patience = parse_field(key, v)?,
            "batch_size" => self.batch_size = parse_field(key, v)?,
            "negatives" => self.negatives = parse_field(key, v)?,
            "seed" => self.seed = parse_field(key, v)?,
            "use_vae" => self.use_vae = parse_field(key, v)?,
            "use_fm" => self.use_fm = parse_field(key, v)?,
            "mc_users" => self.mc_users = parse_field(key, v)?,
            "mc_items" => self.mc_items = parse_field(key, v)?,
            "vae_batch" => self.vae_batch = parse_field(key, v)?,
            "align_weight" => self.align_weight = parse_field(key, v)?,
            "val_fraction" => self.val_fraction = parse_field(key, v)?,
            "score" => self.score = v.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "dim = {}\nlayers = {}\nhidden = {}\nlatent = {}\ndropout = {:?}\nlr = {:?}\nlambda = {:?}\n\
             beta = {:?}\nmax_epochs = {}\npatience = {}\nbatch_size = {}\nnegatives = {}\nseed = {}\n\
             use_vae = {}\nuse_fm = {}\nmc_users = {}\nmc_items = {}\nvae_batch = {}\nalign_weight = {:?}\n\
             val_fraction = {:?}\nscore = {}\n",
            self.dim,
            self.layers,
            self.hidden,
            self.latent,
            self.dropout,
            self.lr,
            self.lambda,
            self.beta,
            self.max_epochs,
            self.patience,
            self.batch_size,
            self.negatives,
            self.seed,
            self.use_vae,
            self.use_fm,
            self.mc_users,
            self.mc_items,
            self.vae_batch,
            self.align_weight,
            self.val_fraction,
            self.score,
        )
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.dim == 0 || self.hidden == 0 || self.latent == 0 {
            return bad("dim, hidden and latent must be positive");
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0 && self.align_weight >= 0.0) {
            return bad("lambda, beta and align_weight must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        if self.batch_size == 0 || self.negatives == 0 || self.vae_batch == 0 {
            return bad("batch_size, negatives and vae_batch must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        Ok(())
    }

    /// Whether the generative term takes part in training.
    pub fn vae_active(&self) -> bool {
        self.use_vae && self.beta > 0.0
    }

    pub fn uses_decoder_scores(&self) -> bool {
        match self.score {
            ScoreSource::Auto => self.vae_active(),
            ScoreSource::Decoder => true,
            ScoreSource::Latent => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    WoVae,
    WoFm,
    WoBoth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::WoVae, Variant::WoFm, Variant::WoBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoVae => "wo_vae",
            Variant::WoFm => "wo_fm",
            Variant::WoBoth => "wo_both",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (full, wo_vae, wo_fm, wo_both)")))
    }
}

/// Config for an ablation variant. `wo_vae` drops the generative term,
/// `wo_fm` drops the similarity constraint and the gate's feature input.
pub fn ablate(config: &TrainConfig, variant: Variant) -> TrainConfig {
    let mut c = config.clone();
    if matches!(variant, Variant::WoVae | Variant::WoBoth) {
        c.beta = 0.0;
        c.use_vae = false;
    }
    if matches!(variant, Variant::WoFm | Variant::WoBoth) {
        c.lambda = 0.0;
        c.use_fm = false;
    }
    c
}

/// `-ln σ(pos - neg)`, stable for any finite difference.
pub fn bpr_loss(score_pos: f64, score_neg: f64) -> f64 {
    softplus(score_neg - score_pos)
}

pub fn total_loss(l_rec: f64, l_mc: f64, l_vae: f64, lambda: f64, beta: f64) -> f64 {
    l_rec + lambda * l_mc + beta * l_vae
}

/// `count` items drawn uniformly with replacement from the complement of
/// `positives` (sorted). `None` when the user has interacted with every item.
pub fn sample_negatives(positives: &[usize], n_items: usize, count: usize, rng: &mut Rng) -> Option<Vec<usize>> {
    if positives.len() >= n_items {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.below(n_items);
        if positives.binary_search(&j).is_err() {
            out.push(j);
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    embedding: ParamId,
    head: ParamId,
    enc_w1: ParamId,
    enc_b1: ParamId,
    enc_w_mu: ParamId,
    enc_b_mu: ParamId,
    enc_w_logvar: ParamId,
    enc_b_logvar: ParamId,
    gate_w_feat: ParamId,
    gate_w_mu: ParamId,
    gate_w_sigma: ParamId,
    gate_w_z: ParamId,
    dec_w1: ParamId,
    dec_b1: ParamId,
    dec_w2: ParamId,
    dec_b2: ParamId,
}

fn init_store(c: &TrainConfig, m: usize, n: usize, rng: &mut Rng) -> (ParamStore, Ids) {
    let mut s = ParamStore::new();
    let mut emb_rng = rng.split(STREAM_INIT);
    let mut glorot = |s: &mut ParamStore, name: &str, r: usize, cols: usize| {
        s.add(name, rng.uniform_matrix(r, cols, glorot_bound(r, cols)))
    };
    let (d, h, k) = (c.dim, c.hidden, c.latent);
    let e = emb_rng.uniform_matrix(m + n, d, glorot_bound(m + n, d));
    let embedding = s.add("embedding", e);
    let head = s.add("head", DenseMatrix::filled(1, d, 1.0));
    let enc_w1 = glorot(&mut s, "enc.w1", n, h);
    let enc_b1 = s.add("enc.b1", DenseMatrix::zeros(1, h));
    let enc_w_mu = glorot(&mut s, "enc.w_mu", h, k);
    let enc_b_mu = s.add("enc.b_mu", DenseMatrix::zeros(1, k));
    let enc_w_logvar = glorot(&mut s, "enc.w_logvar", h, k);
    let enc_b_logvar = s.add("enc.b_logvar", DenseMatrix::zeros(1, k));
    let gate_w_feat = glorot(&mut s, "gate.w_feat", d, k);
    let gate_w_mu = glorot(&mut s, "gate.w_mu", k, k);
    let gate_w_sigma = glorot(&mut s, "gate.w_sigma", k, k);
    let gate_w_z = glorot(&mut s, "gate.w_z", 2 * k, k);
    let dec_w1 = glorot(&mut s, "dec.w1", k, h);
    let dec_b1 = s.add("dec.b1", DenseMatrix::zeros(1, h));
    let dec_w2 = glorot(&mut s, "dec.w2", h, n);
    let dec_b2 = s.add("dec.b2", DenseMatrix::zeros(1, n));
    let ids = Ids {
        embedding,
        head,
        enc_w1,
        enc_b1,
        enc_w_mu,
        enc_b_mu,
        enc_w_logvar,
        enc_b_logvar,
        gate_w_feat,
        gate_w_mu,
        gate_w_sigma,
        gate_w_z,
        dec_w1,
        dec_b1,
        dec_w2,
        dec_b2,
    };
    (s, ids)
}

/// Random draws for one optimization step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(user, positive item, negative item)`.
    pub triples: Vec<(usize, usize, usize)>,
    pub mc_users: Vec<usize>,
    pub mc_items: Vec<usize>,
    pub vae_users: Vec<usize>,
    pub noise: Option<DenseMatrix>,
    pub mask: Option<DenseMatrix>,
}

/// Unweighted loss components and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub mc: f64,
    pub vae: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: LossParts,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: LossParts,
    pub val_ndcg20: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Epoch (1-based) whose parameters were kept; 0 when none ran.
    pub best_epoch: usize,
    pub best_val_ndcg20: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_rec,loss_mc,loss_vae,val_ndcg20\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                r.epoch, r.loss.rec, r.loss.mc, r.loss.vae, r.val_ndcg20
            ));
        }
        s
    }
}

/// Trainable state plus the fixed graph it is trained on.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    ids: Ids,
    pub graph: BipartiteGraph,
    co_users: SparseMatrix,
    co_items: SparseMatrix,
    /// Train positives used for fitting, per user, sorted.
    pub fit_items: Vec<Vec<usize>>,
    /// Train positives held out for early stopping.
    pub val_items: Vec<Vec<usize>>,
    /// All train positives (fit and validation); excluded when ranking test items.
    pub train_items: Vec<Vec<usize>>,
    /// Epochs trained so far.
    pub epoch: usize,
}

impl Model {
    /// Initializes parameters and carves the validation split out of the
    /// train pairs of `data`.
    pub fn new(config: TrainConfig, data: &InteractionSet) -> Result<Self> {
        config.validate()?;
        let (m, n) = (data.n_users(), data.n_items());
        if data.count(Split::Train) == 0 {
            return Err(Error::EmptyDataset("no train interactions".into()));
        }
        let base = Rng::new(config.seed);
        let train = data.restrict(Split::Train);
        let tags = if config.val_fraction > 0.0 {
            train.holdout_tags(config.val_fraction, &base.split(STREAM_VALIDATION), 1)?
        } else {
            vec![Split::Train; train.len()]
        };
        let mut fit_items = vec![Vec::new(); m];
        let mut val_items = vec![Vec::new(); m];
        for (&(u, i), &t) in train.pairs().iter().zip(&tags) {
            match t {
                Split::Train => fit_items[u].push(i),
                Split::Test => val_items[u].push(i),
            }
        }
        let mut train_items = vec![Vec::new(); m];
        for (u, i) in data.pairs_in(Split::Train) {
            train_items[u].push(i);
        }
        for v in fit_items.iter_mut().chain(&mut val_items).chain(&mut train_items) {
            v.sort_unstable();
        }
        let r = SparseMatrix::from_triplets(
            m,
            n,
            fit_items
                .iter()
                .enumerate()
                .flat_map(|(u, items)| items.iter().map(move |&i| (u, i, 1.0))),
        )?;
        let graph = build_adjacency(&r);
        let (co_users, co_items) = cooccurrence(&r);
        let mut init_rng = base.split(STREAM_INIT);
        let (store, ids) = init_store(&config, m, n, &mut init_rng);
        Ok(Self {
            config,
            store,
            ids,
            graph,
            co_users,
            co_items,
            fit_items,
            val_items,
            train_items,
            epoch: 0,
        })
    }

    pub fn n_users(&self) -> usize {
        self.graph.n_users
    }

    pub fn n_items(&self) -> usize {
        self.graph.n_items
    }

    fn weights<'a>(&self, store: &'a ParamStore) -> VaeWeights<'a> {
        let v = |id| store.value(id);
        let ids = &self.ids;
        VaeWeights {
            encoder: Encoder {
                w1: v(ids.enc_w1),
                b1: v(ids.enc_b1),
                w_mu: v(ids.enc_w_mu),
                b_mu: v(ids.enc_b_mu),
                w_logvar: v(ids.enc_w_logvar),
                b_logvar: v(ids.enc_b_logvar),
            },
            gate: GateUnit {
                w_feat: v(ids.gate_w_feat),
                w_mu: v(ids.gate_w_mu),
                w_sigma: v(ids.gate_w_sigma),
                w_z: v(ids.gate_w_z),
            },
            decoder: Decoder {
                w1: v(ids.dec_w1),
                b1: v(ids.dec_b1),
                w2: v(ids.dec_w2),
                b2: v(ids.dec_b2),
            },
        }
    }

    /// Draws negatives, constraint samples and generative noise for the
    /// given positive pairs. Users with no possible negative are skipped.
    pub fn make_batch(&self, positives: &[(usize, usize)], vae_users: Vec<usize>, rng: &mut Rng) -> Batch {
        let c = &self.config;
        let n = self.n_items();
        let mut triples = Vec::with_capacity(positives.len() * c.negatives);
        for &(u, i) in positives {
            match sample_negatives(&self.fit_items[u], n, c.negatives, rng) {
                Some(neg) => triples.extend(neg.into_iter().map(|j| (u, i, j))),
                None => log::warn!("user {u} has interacted with every item; skipped"),
            }
        }
        let (mc_users, mc_items) = if c.lambda > 0.0 {
            (
                rng.choose_distinct(self.n_users(), c.mc_users),
                rng.choose_distinct(n, c.mc_items),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let (vae_users, noise, mask) = if c.vae_active() && !vae_users.is_empty() {
            let b = vae_users.len();
            let noise = rng.sample_gaussian(b, c.latent);
            let keep = 1.0 / (1.0 - c.dropout);
            let data = (0..b * n)
                .map(|_| if rng.bernoulli(c.dropout) { 0.0 } else { keep })
                .collect();
            let mask = DenseMatrix::new(b, n, data).expect("sized by construction");
            (vae_users, Some(noise), Some(mask))
        } else {
            (Vec::new(), None, None)
        };
        Batch {
            triples,
            mc_users,
            mc_items,
            vae_users,
            noise,
            mask,
        }
    }

    /// Objective on one batch with gradients for every parameter, evaluated
    /// at `store` (which must have this model's layout) over the propagation
    /// matrix `norm`.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        norm: &SparseMatrix,
        batch: &Batch,
    ) -> Result<(LossParts, Vec<(ParamId, DenseMatrix)>)> {
        let c = &self.config;
        let ids = self.ids;
        let (m, n, d) = (self.n_users(), self.n_items(), c.dim);
        let layers = propagate(norm, store.value(ids.embedding), c.layers)?;
        let pooled = pool(&layers)?;
        let (e_u, e_v) = split_nodes(&pooled, m);
        let h = store.value(ids.head);
        let mut g_u = DenseMatrix::zeros(m, d);
        let mut g_v = DenseMatrix::zeros(n, d);
        let mut g_h = DenseMatrix::zeros(1, d);
        let mut grads = Vec::new();
        let mut parts = LossParts::default();

        if !batch.triples.is_empty() {
            let scale = 1.0 / batch.triples.len() as f64;
            for &(u, i, j) in &batch.triples {
                let (eu, ei, ej) = (e_u.row(u), e_v.row(i), e_v.row(j));
                let x = dot(eu, ei) - dot(eu, ej);
                parts.rec += softplus(-x);
                let coef = -sigmoid(-x) * scale;
                for k in 0..d {
                    g_u.row_mut(u)[k] += coef * (ei[k] - ej[k]);
                }
                for (g, a) in g_v.row_mut(i).iter_mut().zip(eu) {
                    *g += coef * a;
                }
                for (g, a) in g_v.row_mut(j).iter_mut().zip(eu) {
                    *g -= coef * a;
                }
            }
            parts.rec *= scale;
        }

        if c.lambda > 0.0 && !batch.mc_users.is_empty() && !batch.mc_items.is_empty() {
            let out = constraint_loss(
                &e_u,
                &e_v,
                h,
                &self.co_users,
                &self.co_items,
                &batch.mc_users,
                &batch.mc_items,
            )?;
            parts.mc = out.loss;
            g_u.axpy(c.lambda, &out.grad_e_u)?;
            g_v.axpy(c.lambda, &out.grad_e_v)?;
            g_h.axpy(c.lambda, &out.grad_h)?;
        }

        if c.vae_active() && !batch.vae_users.is_empty() {
            let users = &batch.vae_users;
            let eu_b = e_u.select_rows(users);
            let p_b = eu_b.matmul_nt(&e_v)?;
            let feat_b = row_scaled(&eu_b, h);
            let targets: Vec<Vec<usize>> = users.iter().map(|&u| self.fit_items[u].clone()).collect();
            let out = vae_loss(
                &VaeBatch {
                    scores: &p_b,
                    features: c.use_fm.then_some(&feat_b),
                    targets: &targets,
                    noise: batch.noise.as_ref(),
                    input_mask: batch.mask.as_ref(),
                },
                &self.weights(store),
            )?;
            let mut r_hat = feat_b.matmul_nt(&e_v)?;
            r_hat.map_inplace(sigmoid);
            let (align, ga, gb) = wasserstein_align(&r_hat, &p_b)?;
            parts.vae = out.loss + c.align_weight * align;

            let g = out.grads;
            let mut d_p = g.scores;
            d_p.axpy(c.align_weight, &gb)?;
            let mut d_logit = ga;
            for (x, r) in d_logit.as_mut_slice().iter_mut().zip(r_hat.as_slice()) {
                *x *= c.align_weight * r * (1.0 - r);
            }
            let mut d_feat = d_logit.matmul(&e_v)?;
            if let Some(f) = &g.features {
                d_feat.axpy(1.0, f)?;
            }
            let mut d_eu = d_p.matmul(&e_v)?;
            d_eu.axpy(1.0, &row_scaled(&d_feat, h))?;
            let beta = c.beta;
            gemm(beta, &d_p, Trans::Yes, &eu_b, Trans::No, 1.0, &mut g_v)?;
            gemm(beta, &d_logit, Trans::Yes, &feat_b, Trans::No, 1.0, &mut g_v)?;
            let gh = d_feat.hadamard(&eu_b)?.column_sums();
            g_h.axpy(beta, &gh)?;
            for (r, &u) in users.iter().enumerate() {
                for (a, b) in g_u.row_mut(u).iter_mut().zip(d_eu.row(r)) {
                    *a += beta * b;
                }
            }
            let scaled = |mut x: DenseMatrix| {
                x.scale(beta);
                x
            };
            grads.extend([
                (ids.enc_w1, scaled(g.enc_w1)),
                (ids.enc_b1, scaled(g.enc_b1)),
                (ids.enc_w_mu, scaled(g.enc_w_mu)),
                (ids.enc_b_mu, scaled(g.enc_b_mu)),
                (ids.enc_w_logvar, scaled(g.enc_w_logvar)),
                (ids.enc_b_logvar, scaled(g.enc_b_logvar)),
                (ids.gate_w_feat, scaled(g.gate_w_feat)),
                (ids.gate_w_mu, scaled(g.gate_w_mu)),
                (ids.gate_w_sigma, scaled(g.gate_w_sigma)),
                (ids.gate_w_z, scaled(g.gate_w_z)),
                (ids.dec_w1, scaled(g.dec_w1)),
                (ids.dec_b1, scaled(g.dec_b1)),
                (ids.dec_w2, scaled(g.dec_w2)),
                (ids.dec_b2, scaled(g.dec_b2)),
            ]);
        }

        parts.total = total_loss(parts.rec, parts.mc, parts.vae, c.lambda, c.beta);
        if !parts.total.is_finite() {
            return Err(Error::Divergence {
                name: format!("loss (rec {}, mc {}, vae {})", parts.rec, parts.mc, parts.vae),
            });
        }
        let g_pooled = DenseMatrix::vstack(&g_u, &g_v)?;
        grads.push((ids.embedding, propagate_pool_backward(norm, &g_pooled, c.layers)?));
        grads.push((ids.head, g_h));
        Ok((parts, grads))
    }

    /// One optimization step on `batch` over `norm`.
    pub fn step(&mut self, norm: &SparseMatrix, batch: &Batch) -> Result<LossParts> {
        let (parts, grads) = self.loss_and_grads(&self.store, norm, batch)?;
        self.store.zero_grads();
        for (id, g) in &grads {
            self.store.accumulate(*id, g)?;
        }
        self.store.adam_step(&AdamConfig {
            lr: self.config.lr,
            ..AdamConfig::default()
        })?;
        Ok(parts)
    }

    /// One pass over the fitting pairs in a seeded shuffled order.
    pub fn train_epoch(&mut self) -> Result<EpochSummary> {
        let start = Stopwatch::start();
        let c = self.config.clone();
        let mut rng = Rng::new(c.seed).split(STREAM_EPOCH + self.epoch as u64);
        let mut positives: Vec<(usize, usize)> = self
            .fit_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect();
        rng.shuffle(&mut positives);
        let mut users: Vec<usize> = (0..self.n_users()).filter(|&u| !self.fit_items[u].is_empty()).collect();
        rng.shuffle(&mut users);
        let mut cursor = 0;
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for chunk in positives.chunks(c.batch_size) {
            let mut vae_users = Vec::new();
            if c.vae_active() {
                for _ in 0..c.vae_batch.min(users.len()) {
                    vae_users.push(users[cursor % users.len()]);
                    cursor += 1;
                }
            }
            let batch = self.make_batch(chunk, vae_users, &mut rng);
            let norm = self.graph.dropped(c.dropout, &mut rng);
            let p = self.step(&norm, &batch)?;
            sum.rec += p.rec;
            sum.mc += p.mc;
            sum.vae += p.vae;
            sum.total += p.total;
            batches += 1;
        }
        self.epoch += 1;
        let k = batches.max(1) as f64;
        Ok(EpochSummary {
            epoch: self.epoch,
            loss: LossParts {
                rec: sum.rec / k,
                mc: sum.mc / k,
                vae: sum.vae / k,
                total: sum.total / k,
            },
            seconds: start.seconds(),
        })
    }

    /// Mean NDCG@20 on the validation pairs, ranking against the fitting pairs.
    pub fn validation_ndcg20(&self) -> Result<f64> {
        let scorer = self.scorer()?;
        let per_user = evaluate_users(&scorer, &self.fit_items, &self.val_items, &[20])?;
        if per_user.is_empty() {
            return Ok(0.0);
        }
        Ok(per_user.iter().map(|m| m.ndcg[0]).sum::<f64>() / per_user.len() as f64)
    }

    /// Trains until `max_epochs` or until validation NDCG@20 has not improved
    /// for `patience` epochs, then restores the best parameters.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&HistoryRow, &EpochSummary)) -> Result<History> {
        let mut history = History::default();
        let mut best: Option<(ParamStore, usize)> = None;
        let mut stale = 0;
        while self.epoch < self.config.max_epochs {
            let summary = self.train_epoch()?;
            let val = self.validation_ndcg20()?;
            let row = HistoryRow {
                epoch: summary.epoch,
                loss: summary.loss,
                val_ndcg20: val,
            };
            on_epoch(&row, &summary);
            history.rows.push(row);
            if best.is_none() || val > history.best_val_ndcg20 {
                history.best_val_ndcg20 = val;
                history.best_epoch = self.epoch;
                best = Some((self.store.clone(), self.epoch));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.patience {
                    break;
                }
            }
        }
        if let Some((store, epoch)) = best {
            self.store = store;
            self.epoch = epoch;
        }
        Ok(history)
    }

    /// Pooled user and item embeddings without dropout.
    pub fn embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let layers = propagate(&self.graph.normalized, self.store.value(self.ids.embedding), self.config.layers)?;
        Ok(split_nodes(&pool(&layers)?, self.n_users()))
    }

    pub fn scorer(&self) -> Result<ModelScorer<'_>> {
        let (e_u, e_v) = self.embeddings()?;
        Ok(ModelScorer { model: self, e_u, e_v })
    }

    pub fn to_checkpoint(&self, dataset_hash: [u8; 32]) -> Checkpoint {
        let config_text = self.config.to_text();
        Checkpoint {
            config_hash: sha256(config_text.as_bytes()),
            config_text,
            dataset_hash,
            seed: self.config.seed,
            epoch: self.epoch as u32,
            store: self.store.clone(),
        }
    }

    /// Rebuilds the model for `data` from a checkpoint. Parameter names and
    /// shapes must match what the stored config produces for `data`.
    pub fn from_checkpoint(ckpt: &Checkpoint, data: &InteractionSet) -> Result<Self> {
        if sha256(ckpt.config_text.as_bytes()) != ckpt.config_hash {
            return Err(Error::Checkpoint("config hash does not match config text".into()));
        }
        let config = TrainConfig::from_text(&ckpt.config_text)?;
        let mut model = Model::new(config, data)?;
        let fresh = &model.store;
        let same_layout = fresh.len() == ckpt.store.len()
            && fresh
                .params()
                .iter()
                .zip(ckpt.store.params())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !same_layout {
            return Err(Error::Checkpoint(
                "parameter layout does not match this dataset and config".into(),
            ));
        }
        model.store = ckpt.store.clone();
        model.epoch = ckpt.epoch as usize;
        Ok(model)
    }

    /// Worst relative finite-difference error of [`Model::loss_and_grads`]
    /// on a fixed batch without edge dropout.
    pub fn gradient_check(&self, batch: &Batch, h: f64, coords: Coords, rng: &mut Rng) -> Result<f64> {
        let norm = &self.graph.normalized;
        let (_, grads) = self.loss_and_grads(&self.store, norm, batch)?;
        let mut store = self.store.clone();
        store.zero_grads();
        for (id, g) in &grads {
            store.accumulate(*id, g)?;
        }
        finite_diff_check(
            |s| Ok(self.loss_and_grads(s, norm, batch)?.0.total),
            &store,
            h,
            coords,
            rng,
        )
    }
}

/// Epoch timer. There is no clock on bare wasm, where it reads zero.
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

fn row_scaled(x: &DenseMatrix, h: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (a, b) in out.row_mut(r).iter_mut().zip(h.as_slice()) {
            *a *= b;
        }
    }
    out
}

/// Evaluation-mode scorer with propagated embeddings cached.
pub struct ModelScorer<'a> {
    model: &'a Model,
    e_u: DenseMatrix,
    e_v: DenseMatrix,
}

impl ModelScorer<'_> {
    pub fn user_embeddings(&self) -> &DenseMatrix {
        &self.e_u
    }

    pub fn item_embeddings(&self) -> &DenseMatrix {
        &self.e_v
    }
}

impl Scorer for ModelScorer<'_> {
    fn n_users(&self) -> usize {
        self.e_u.rows()
    }

    fn n_items(&self) -> usize {
        self.e_v.rows()
    }

    fn score_users(&self, users: &[usize]) -> Result<DenseMatrix> {
        if let Some(&u) = users.iter().find(|&&u| u >= self.e_u.rows()) {
            return Err(shape_err("score_users", format!("user {u} out of range")));
        }
        let eu_b = self.e_u.select_rows(users);
        let p_b = eu_b.matmul_nt(&self.e_v)?;
        let m = self.model;
        if !m.config.uses_decoder_scores() {
            return Ok(p_b);
        }
        let h = m.store.value(m.ids.head);
        let feat = row_scaled(&eu_b, h);
        eval_logits(&p_b, m.config.use_fm.then_some(&feat), &m.weights(&m.store))
    }
}
