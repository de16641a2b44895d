//! Variational completion of user rows.
//!
//! A user's latent rating row is encoded to a diagonal Gaussian, fused with
//! the user's high-order feature through a gate, sampled, and decoded to a
//! multinomial over items. The 1-D Wasserstein distance between each row of
//! the factorization head and the matching latent rating row is an auxiliary
//! alignment term.

use crate::error::{shape_err, Error, Result};
use crate::numeric::{gemm, log_softmax_inplace, sigmoid, softplus, DenseMatrix, Rng, Trans};

/// Floor added to the gated standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Log-variance clamp.
pub const LOGVAR_BOUND: f64 = 10.0;

/// Exact 1-D Wasserstein-1 distance between the empirical distributions of
/// two equally long samples: mean absolute difference of the sorted values.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Row-wise 1-D Wasserstein distance between `r_hat` and `p`, averaged over
/// rows, with (sub)gradients for both inputs.
pub fn wasserstein_align(
    r_hat: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if r_hat.shape() != p.shape() {
        return Err(shape_err(
            "wasserstein_align",
            format!("{:?} vs {:?}", r_hat.shape(), p.shape()),
        ));
    }
    let (rows, cols) = p.shape();
    let mut ga = DenseMatrix::zeros(rows, cols);
    let mut gb = DenseMatrix::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return Ok((0.0, ga, gb));
    }
    let scale = 1.0 / (rows * cols) as f64;
    let mut total = 0.0;
    let mut ia: Vec<usize> = Vec::with_capacity(cols);
    let mut ib: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..rows {
        let (a, b) = (r_hat.row(r), p.row(r));
        ia.clear();
        ia.extend(0..cols);
        ib.clear();
        ib.extend(0..cols);
        ia.sort_by(|&x, &y| a[x].total_cmp(&a[y]).then(x.cmp(&y)));
        ib.sort_by(|&x, &y| b[x].total_cmp(&b[y]).then(x.cmp(&y)));
        let (gar, gbr) = (ga.row_mut(r), gb.row_mut(r));
        let mut row_total = 0.0;
        for (&x, &y) in ia.iter().zip(&ib) {
            let diff = a[x] - b[y];
            row_total += diff.abs();
            let s = diff.signum() * scale;
            gar[x] = s;
            gbr[y] = -s;
        }
        total += row_total;
    }
    Ok((total * scale, ga, gb))
}

/// Encoder weights: one tanh hidden layer, then mean and log-variance heads.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    pub w1: &'a DenseMatrix,
    pub b1: &'a DenseMatrix,
    pub w_mu: &'a DenseMatrix,
    pub b_mu: &'a DenseMatrix,
    pub w_logvar: &'a DenseMatrix,
    pub b_logvar: &'a DenseMatrix,
}

/// Gate weights. `w_feat` projects the high-order feature into latent space.
#[derive(Debug, Clone, Copy)]
pub struct GateUnit<'a> {
    pub w_feat: &'a DenseMatrix,
    pub w_mu: &'a DenseMatrix,
    pub w_sigma: &'a DenseMatrix,
    pub w_z: &'a DenseMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct Decoder<'a> {
    pub w1: &'a DenseMatrix,
    pub b1: &'a DenseMatrix,
    pub w2: &'a DenseMatrix,
    pub b2: &'a DenseMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct VaeWeights<'a> {
    pub encoder: Encoder<'a>,
    pub gate: GateUnit<'a>,
    pub decoder: Decoder<'a>,
}

fn affine(x: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = x.matmul(w)?;
    out.add_row_broadcast(b)?;
    Ok(out)
}

fn check_finite(m: &DenseMatrix, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

/// Unit-L2 rows; zero rows stay zero. Returns the normalized rows and norms.
pub fn l2_normalize_rows(x: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        if n > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Encoder forward on a batch of already-normalized input rows. Returns
/// `(hidden, mean, raw log-variance)`.
fn encoder_forward(x: &DenseMatrix, enc: &Encoder) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    let mut h1 = affine(x, enc.w1, enc.b1)?;
    h1.map_inplace(f64::tanh);
    check_finite(&h1, "encoder.hidden")?;
    let mu = affine(&h1, enc.w_mu, enc.b_mu)?;
    check_finite(&mu, "encoder.mu")?;
    let lv = affine(&h1, enc.w_logvar, enc.b_logvar)?;
    check_finite(&lv, "encoder.logvar")?;
    Ok((h1, mu, lv))
}

/// Encodes one user's latent rating row to `(μ, σ)` with `σ = exp(½ logvar)`.
/// The row is L2-normalized first; no dropout.
pub fn encode(p_u: &[f64], enc: &Encoder) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, _) = l2_normalize_rows(&DenseMatrix::row_vector(p_u));
    let (_, mu, lv) = encoder_forward(&x, enc)?;
    let sigma = lv
        .as_slice()
        .iter()
        .map(|v| (0.5 * v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).exp())
        .collect();
    Ok((mu.into_vec(), sigma))
}

/// Gated fusion for a batch: returns `(h_μ, h_σ, g, μ_u, raw σ_u, σ_u)`.
#[allow(clippy::type_complexity)]
fn gate_forward(
    x_mu: &DenseMatrix,
    x_sigma: &DenseMatrix,
    gate: &GateUnit,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix)> {
    let mut h_mu = x_mu.matmul(gate.w_mu)?;
    h_mu.map_inplace(f64::tanh);
    let mut h_sigma = x_sigma.matmul(gate.w_sigma)?;
    h_sigma.map_inplace(f64::tanh);
    let cat = DenseMatrix::hstack(x_mu, x_sigma)?;
    let mut g = cat.matmul(gate.w_z)?;
    g.map_inplace(sigmoid);
    let mu = g.hadamard(&h_mu)?;
    let mut s_raw = h_sigma.clone();
    for (s, gv) in s_raw.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *s *= 1.0 - gv;
    }
    let sigma = s_raw.map(|v| softplus(v) + SIGMA_FLOOR);
    Ok((h_mu, h_sigma, g, mu, s_raw, sigma))
}

/// `h_μ = tanh(W_μ x_μ)`, `h_σ = tanh(W_σ x_σ)`, `g = σ(W_z [x_μ, x_σ])`,
/// `μ_u = g ⊙ h_μ`, `σ_u = softplus((1 - g) ⊙ h_σ) + floor`.
pub fn gate_fuse(x_mu: &[f64], x_sigma: &[f64], gate: &GateUnit) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, _, _, mu, _, sigma) = gate_forward(
        &DenseMatrix::row_vector(x_mu),
        &DenseMatrix::row_vector(x_sigma),
        gate,
    )?;
    Ok((mu.into_vec(), sigma.into_vec()))
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// Reparameterized draw with fresh standard-normal noise from `rng`.
pub fn reparameterize_sample(mu: &[f64], sigma: &[f64], rng: &mut Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.normal()).collect();
    reparameterize(mu, sigma, &eps)
}

/// `Σ_i r_i ln π_i` over the positive entries of a binary row.
pub fn multinomial_loglik(pi: &[f64], r: &[f64]) -> f64 {
    pi.iter()
        .zip(r)
        .filter(|(_, &ri)| ri != 0.0)
        .map(|(p, ri)| ri * p.ln())
        .sum()
}

/// Multinomial negative log-likelihood of the `targets` under
/// `softmax(logits)`, with its gradient with respect to the logits.
pub fn multinomial_nll(logits: &[f64], targets: &[usize]) -> (f64, Vec<f64>) {
    let mut logp = logits.to_vec();
    log_softmax_inplace(&mut logp);
    let nll = -targets.iter().map(|&i| logp[i]).sum::<f64>();
    let cnt = targets.len() as f64;
    let mut grad: Vec<f64> = logp.iter().map(|l| cnt * l.exp()).collect();
    for &i in targets {
        grad[i] -= 1.0;
    }
    (nll, grad)
}

/// Gradient of [`gaussian_kl`] with respect to `μ` and `σ`.
pub fn gaussian_kl_grad(mu: &[f64], sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), sigma.iter().map(|s| s - 1.0 / s).collect())
}

/// KL from `N(μ, diag σ²)` to the standard normal.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln())
        .sum::<f64>()
}

/// Decoder forward: returns `(hidden, log π)`.
fn decoder_forward(z: &DenseMatrix, dec: &Decoder) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut d1 = affine(z, dec.w1, dec.b1)?;
    d1.map_inplace(f64::tanh);
    let mut logp = affine(&d1, dec.w2, dec.b2)?;
    check_finite(&logp, "decoder.logits")?;
    for r in 0..logp.rows() {
        log_softmax_inplace(logp.row_mut(r));
    }
    Ok((d1, logp))
}

/// Decoder output `π(z)` for a batch of latent codes; rows sum to one.
pub fn decode(z: &DenseMatrix, dec: &Decoder) -> Result<DenseMatrix> {
    let (_, mut logp) = decoder_forward(z, dec)?;
    logp.map_inplace(f64::exp);
    Ok(logp)
}

/// Inputs for one batch of users.
#[derive(Debug, Clone, Copy)]
pub struct VaeBatch<'a> {
    /// Latent rating rows `P_u` (`b x N`).
    pub scores: &'a DenseMatrix,
    /// High-order feature rows (`b x d`), or `None` to gate on encoder outputs only.
    pub features: Option<&'a DenseMatrix>,
    /// Train positives of each batch user.
    pub targets: &'a [Vec<usize>],
    /// Standard-normal noise (`b x k`); `None` means `z = μ`.
    pub noise: Option<&'a DenseMatrix>,
    /// Inverted-dropout mask on the normalized input (`b x N`), `None` for no dropout.
    pub input_mask: Option<&'a DenseMatrix>,
}

#[derive(Debug, Clone)]
pub struct VaeGrads {
    pub scores: DenseMatrix,
    pub features: Option<DenseMatrix>,
    pub enc_w1: DenseMatrix,
    pub enc_b1: DenseMatrix,
    pub enc_w_mu: DenseMatrix,
    pub enc_b_mu: DenseMatrix,
    pub enc_w_logvar: DenseMatrix,
    pub enc_b_logvar: DenseMatrix,
    pub gate_w_feat: DenseMatrix,
    pub gate_w_mu: DenseMatrix,
    pub gate_w_sigma: DenseMatrix,
    pub gate_w_z: DenseMatrix,
    pub dec_w1: DenseMatrix,
    pub dec_b1: DenseMatrix,
    pub dec_w2: DenseMatrix,
    pub dec_b2: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct VaeOutput {
    /// Mean negative multinomial log-likelihood plus mean KL.
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grads: VaeGrads,
}

/// Posterior mean and standard deviation after gating, for a batch.
pub fn posterior(batch: &VaeBatch, w: &VaeWeights) -> Result<(DenseMatrix, DenseMatrix)> {
    let (x, _) = l2_normalize_rows(batch.scores);
    let (_, mu_e, lv_raw) = encoder_forward(&x, &w.encoder)?;
    let lv = lv_raw.map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND));
    let (x_mu, x_sigma) = gate_inputs(&mu_e, &lv, batch.features, &w.gate)?;
    let (_, _, _, mu, _, sigma) = gate_forward(&x_mu, &x_sigma, &w.gate)?;
    Ok((mu, sigma))
}

fn gate_inputs(
    mu_e: &DenseMatrix,
    lv: &DenseMatrix,
    features: Option<&DenseMatrix>,
    gate: &GateUnit,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut x_mu = mu_e.clone();
    let mut x_sigma = lv.clone();
    if let Some(f) = features {
        let proj = f.matmul(gate.w_feat)?;
        x_mu.axpy(1.0, &proj)?;
        x_sigma.axpy(1.0, &proj)?;
    }
    Ok((x_mu, x_sigma))
}

/// Negative ELBO for a batch, averaged over users, with gradients for every
/// weight and for the input rows and features.
pub fn vae_loss(batch: &VaeBatch, w: &VaeWeights) -> Result<VaeOutput> {
    let b = batch.scores.rows();
    let n = batch.scores.cols();
    if batch.targets.len() != b {
        return Err(shape_err(
            "vae_loss",
            format!("{} target rows for {b} users", batch.targets.len()),
        ));
    }
    let inv_b = 1.0 / b.max(1) as f64;

    // forward
    let (x_norm, norms) = l2_normalize_rows(batch.scores);
    let x_in = match batch.input_mask {
        Some(mask) => x_norm.hadamard(mask)?,
        None => x_norm.clone(),
    };
    let (h1, mu_e, lv_raw) = encoder_forward(&x_in, &w.encoder)?;
    let lv = lv_raw.map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND));
    let (x_mu, x_sigma) = gate_inputs(&mu_e, &lv, batch.features, &w.gate)?;
    let (h_mu, h_sigma, g, mu, s_raw, sigma) = gate_forward(&x_mu, &x_sigma, &w.gate)?;
    let mut z = mu.clone();
    if let Some(eps) = batch.noise {
        z.axpy(1.0, &sigma.hadamard(eps)?)?;
    }
    let (d1, logp) = decoder_forward(&z, &w.decoder)?;

    let mut nll = 0.0;
    let mut kl = 0.0;
    let mut d_logits = DenseMatrix::zeros(b, n);
    for u in 0..b {
        let (l, g) = multinomial_nll(logp.row(u), &batch.targets[u]);
        nll += l;
        for (o, v) in d_logits.row_mut(u).iter_mut().zip(g) {
            *o = inv_b * v;
        }
        kl += gaussian_kl(mu.row(u), sigma.row(u));
    }
    nll *= inv_b;
    kl *= inv_b;

    // backward: decoder
    let dec_w2 = d1.matmul_tn(&d_logits)?;
    let dec_b2 = d_logits.column_sums();
    let mut d_d1 = d_logits.matmul_nt(w.decoder.w2)?;
    for (g, a) in d_d1.as_mut_slice().iter_mut().zip(d1.as_slice()) {
        *g *= 1.0 - a * a;
    }
    let dec_w1 = z.matmul_tn(&d_d1)?;
    let dec_b1 = d_d1.column_sums();
    let d_z = d_d1.matmul_nt(w.decoder.w1)?;

    // reparameterization and KL
    let mut d_mu = d_z.clone();
    let mut d_sigma = match batch.noise {
        Some(eps) => d_z.hadamard(eps)?,
        None => DenseMatrix::zeros(b, mu.cols()),
    };
    for u in 0..b {
        let (gm, gs) = gaussian_kl_grad(mu.row(u), sigma.row(u));
        d_mu.row_mut(u).iter_mut().zip(gm).for_each(|(d, g)| *d += inv_b * g);
        d_sigma.row_mut(u).iter_mut().zip(gs).for_each(|(d, g)| *d += inv_b * g);
    }
    let mut d_sraw = d_sigma;
    for (d, s) in d_sraw.as_mut_slice().iter_mut().zip(s_raw.as_slice()) {
        *d *= sigmoid(*s);
    }

    // gate
    let k = mu.cols();
    let mut d_g = DenseMatrix::zeros(b, k);
    let mut d_hmu = DenseMatrix::zeros(b, k);
    let mut d_hsigma = DenseMatrix::zeros(b, k);
    for idx in 0..b * k {
        let gv = g.as_slice()[idx];
        let dm = d_mu.as_slice()[idx];
        let ds = d_sraw.as_slice()[idx];
        d_g.as_mut_slice()[idx] = dm * h_mu.as_slice()[idx] - ds * h_sigma.as_slice()[idx];
        d_hmu.as_mut_slice()[idx] = dm * gv;
        d_hsigma.as_mut_slice()[idx] = ds * (1.0 - gv);
    }
    let mut d_zl = d_g;
    for (d, gv) in d_zl.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *d *= gv * (1.0 - gv);
    }
    let cat = DenseMatrix::hstack(&x_mu, &x_sigma)?;
    let gate_w_z = cat.matmul_tn(&d_zl)?;
    let d_cat = d_zl.matmul_nt(w.gate.w_z)?;
    let mut d_xmu = DenseMatrix::zeros(b, k);
    let mut d_xsigma = DenseMatrix::zeros(b, k);
    for u in 0..b {
        let row = d_cat.row(u);
        d_xmu.row_mut(u).copy_from_slice(&row[..k]);
        d_xsigma.row_mut(u).copy_from_slice(&row[k..]);
    }
    for (d, h) in d_hmu.as_mut_slice().iter_mut().zip(h_mu.as_slice()) {
        *d *= 1.0 - h * h;
    }
    for (d, h) in d_hsigma.as_mut_slice().iter_mut().zip(h_sigma.as_slice()) {
        *d *= 1.0 - h * h;
    }
    let gate_w_mu = x_mu.matmul_tn(&d_hmu)?;
    let gate_w_sigma = x_sigma.matmul_tn(&d_hsigma)?;
    gemm(1.0, &d_hmu, Trans::No, w.gate.w_mu, Trans::Yes, 1.0, &mut d_xmu)?;
    gemm(1.0, &d_hsigma, Trans::No, w.gate.w_sigma, Trans::Yes, 1.0, &mut d_xsigma)?;

    let (gate_w_feat, d_features) = match batch.features {
        Some(f) => {
            let mut d_proj = d_xmu.clone();
            d_proj.axpy(1.0, &d_xsigma)?;
            (f.matmul_tn(&d_proj)?, Some(d_proj.matmul_nt(w.gate.w_feat)?))
        }
        None => (DenseMatrix::zeros(w.gate.w_feat.rows(), w.gate.w_feat.cols()), None),
    };

    // encoder
    let d_mue = d_xmu;
    let mut d_lv = d_xsigma;
    for (d, raw) in d_lv.as_mut_slice().iter_mut().zip(lv_raw.as_slice()) {
        if raw.abs() > LOGVAR_BOUND {
            *d = 0.0;
        }
    }
    let enc_w_mu = h1.matmul_tn(&d_mue)?;
    let enc_b_mu = d_mue.column_sums();
    let enc_w_logvar = h1.matmul_tn(&d_lv)?;
    let enc_b_logvar = d_lv.column_sums();
    let mut d_h1 = d_mue.matmul_nt(w.encoder.w_mu)?;
    gemm(1.0, &d_lv, Trans::No, w.encoder.w_logvar, Trans::Yes, 1.0, &mut d_h1)?;
    for (d, a) in d_h1.as_mut_slice().iter_mut().zip(h1.as_slice()) {
        *d *= 1.0 - a * a;
    }
    let enc_w1 = x_in.matmul_tn(&d_h1)?;
    let enc_b1 = d_h1.column_sums();
    let mut d_x = d_h1.matmul_nt(w.encoder.w1)?;
    if let Some(mask) = batch.input_mask {
        d_x = d_x.hadamard(mask)?;
    }
    let mut d_scores = DenseMatrix::zeros(b, n);
    for u in 0..b {
        if norms[u] == 0.0 {
            continue;
        }
        let xr = x_norm.row(u);
        let gr = d_x.row(u);
        let proj: f64 = xr.iter().zip(gr).map(|(a, c)| a * c).sum();
        for ((o, a), c) in d_scores.row_mut(u).iter_mut().zip(xr).zip(gr) {
            *o = (c - a * proj) / norms[u];
        }
    }

    Ok(VaeOutput {
        loss: nll + kl,
        nll,
        kl,
        grads: VaeGrads {
            scores: d_scores,
            features: d_features,
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
        },
    })
}

/// Evaluation-mode item logits: `z = μ`, no dropout. Same ranking as `π`.
pub fn eval_logits(scores: &DenseMatrix, features: Option<&DenseMatrix>, w: &VaeWeights) -> Result<DenseMatrix> {
    let batch = VaeBatch {
        scores,
        features,
        targets: &[],
        noise: None,
        input_mask: None,
    };
    let (mu, _) = posterior(&batch, w)?;
    let (_, logp) = decoder_forward(&mu, &w.decoder)?;
    Ok(logp)
}
