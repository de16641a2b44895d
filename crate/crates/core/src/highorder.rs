//! Factorization head and the high-order similarity constraint.
//!
//! The head scores every user-item pair with a weighted elementwise product,
//! `R̂ = σ((E_U ⊙ h) E_Vᵀ)`. Predicted user-user and item-item similarities
//! are built from `R̂` and compared, row by row, with co-occurrence counts
//! through a KL divergence.

use crate::error::{shape_err, Result};
use crate::numeric::{sigmoid, softplus, DenseMatrix, SparseMatrix};

/// Additive smoothing applied before row normalization.
pub const KL_SMOOTHING: f64 = 1e-8;

/// `R̂[i, j] = σ(Σ_k h_k E_U[i, k] E_V[j, k])`, computed as one matrix product.
pub fn interaction_head(e_u: &DenseMatrix, e_v: &DenseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
    let mut logits = head_logits(e_u, e_v, h)?;
    logits.map_inplace(sigmoid);
    Ok(logits)
}

fn head_logits(e_u: &DenseMatrix, e_v: &DenseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
    if h.rows() != 1 || h.cols() != e_u.cols() || e_u.cols() != e_v.cols() {
        return Err(shape_err(
            "interaction_head",
            format!(
                "E_U {:?}, E_V {:?}, h {:?}",
                e_u.shape(),
                e_v.shape(),
                h.shape()
            ),
        ));
    }
    weighted(e_u, h).matmul_nt(e_v)
}

/// Each row of `x` multiplied elementwise by the row vector `h`.
fn weighted(x: &DenseMatrix, h: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (a, b) in out.row_mut(r).iter_mut().zip(h.as_slice()) {
            *a *= b;
        }
    }
    out
}

/// `Ŵ_U = E_U (R̂ E_V)ᵀ` and `Ŵ_V = E_V (R̂ᵀ E_U)ᵀ`.
pub fn predicted_similarity(
    e_u: &DenseMatrix,
    e_v: &DenseMatrix,
    r_hat: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if r_hat.rows() != e_u.rows() || r_hat.cols() != e_v.rows() || e_u.cols() != e_v.cols() {
        return Err(shape_err(
            "predicted_similarity",
            format!(
                "E_U {:?}, E_V {:?}, R̂ {:?}",
                e_u.shape(),
                e_v.shape(),
                r_hat.shape()
            ),
        ));
    }
    let w_u = e_u.matmul_nt(&r_hat.matmul(e_v)?)?;
    let w_v = e_v.matmul_nt(&r_hat.matmul_tn(e_u)?)?;
    Ok((w_u, w_v))
}

/// `W_U = R Rᵀ` and `W_V = Rᵀ R`.
pub fn cooccurrence(r: &SparseMatrix) -> (SparseMatrix, SparseMatrix) {
    let rt = r.transpose();
    let w_u = r.matmul_sparse(&rt).expect("conformant by construction");
    let w_v = rt.matmul_sparse(r).expect("conformant by construction");
    (w_u, w_v)
}

/// Summed row-wise KL divergence between two nonnegative matrices after
/// smoothing and row normalization, plus its gradient with respect to `q`.
pub fn kl_rows(p: &DenseMatrix, q: &DenseMatrix, eps: f64) -> Result<(f64, DenseMatrix)> {
    if p.shape() != q.shape() {
        return Err(shape_err("kl_rows", format!("{:?} vs {:?}", p.shape(), q.shape())));
    }
    let mut grad = DenseMatrix::zeros(q.rows(), q.cols());
    let mut total = 0.0;
    for r in 0..p.rows() {
        let pr = p.row(r);
        let qr = q.row(r);
        let p_sum: f64 = pr.iter().map(|x| x + eps).sum();
        let q_sum: f64 = qr.iter().map(|x| x + eps).sum();
        let g = grad.row_mut(r);
        for c in 0..pr.len() {
            let pn = (pr[c] + eps) / p_sum;
            let a = qr[c] + eps;
            let qn = a / q_sum;
            if pn > 0.0 {
                total += pn * (pn / qn).ln();
            }
            g[c] = -pn / a + 1.0 / q_sum;
        }
    }
    Ok((total.max(0.0), grad))
}

/// KL of the co-occurrence rows against softplus-shifted predicted
/// similarities, summed over rows. Returns the gradient with respect to the
/// raw predicted matrix.
pub fn constraint_kl(w: &DenseMatrix, w_hat: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let shifted = w_hat.map(softplus);
    let (loss, mut grad) = kl_rows(w, &shifted, KL_SMOOTHING)?;
    for (g, x) in grad.as_mut_slice().iter_mut().zip(w_hat.as_slice()) {
        *g *= sigmoid(*x);
    }
    Ok((loss, grad))
}

/// Constraint loss and gradients on sampled node subsets.
#[derive(Debug, Clone)]
pub struct ConstraintOutput {
    pub loss: f64,
    pub grad_e_u: DenseMatrix,
    pub grad_e_v: DenseMatrix,
    pub grad_h: DenseMatrix,
}

/// High-order constraint restricted to the sampled users `users` and items
/// `items`: the user term compares `W_U[S, S]` with `Ŵ_U[S, S]`, the item
/// term `W_V[T, T]` with `Ŵ_V[T, T]`. Each term is the mean row KL, so the
/// loss scale does not grow with the sample size. With all users and all
/// items sampled this is the full loss divided by `M` and `N` respectively.
pub fn constraint_loss(
    e_u: &DenseMatrix,
    e_v: &DenseMatrix,
    h: &DenseMatrix,
    w_u: &SparseMatrix,
    w_v: &SparseMatrix,
    users: &[usize],
    items: &[usize],
) -> Result<ConstraintOutput> {
    let d = e_u.cols();
    if e_v.cols() != d || h.shape() != (1, d) {
        return Err(shape_err(
            "constraint_loss",
            format!("E_U {:?}, E_V {:?}, h {:?}", e_u.shape(), e_v.shape(), h.shape()),
        ));
    }
    let mut grad_e_u = DenseMatrix::zeros(e_u.rows(), d);
    let mut grad_e_v = DenseMatrix::zeros(e_v.rows(), d);
    let mut grad_h = DenseMatrix::zeros(1, d);
    let mut loss = 0.0;

    if !users.is_empty() {
        let s = users.len() as f64;
        let a = e_u.select_rows(users);
        let hd = weighted(&a, h);
        let rh = hd.matmul_nt(e_v)?.map(sigmoid);
        let q = rh.matmul(e_v)?;
        let w_hat = a.matmul_nt(&q)?;
        let target = w_u.dense_submatrix(users, users);
        let (l, mut g) = constraint_kl(&target, &w_hat)?;
        loss += l / s;
        g.scale(1.0 / s);

        let mut d_a = g.matmul(&q)?;
        let d_q = g.matmul_tn(&a)?;
        let d_rh = d_q.matmul_nt(e_v)?;
        grad_e_v.axpy(1.0, &rh.matmul_tn(&d_q)?)?;
        let mut d_x = d_rh;
        for (dx, r) in d_x.as_mut_slice().iter_mut().zip(rh.as_slice()) {
            *dx *= r * (1.0 - r);
        }
        let d_hd = d_x.matmul(e_v)?;
        grad_e_v.axpy(1.0, &d_x.matmul_tn(&hd)?)?;
        d_a.axpy(1.0, &weighted(&d_hd, h))?;
        grad_h.axpy(1.0, &d_hd.hadamard(&a)?.column_sums())?;
        for (k, &u) in users.iter().enumerate() {
            for (gd, x) in grad_e_u.row_mut(u).iter_mut().zip(d_a.row(k)) {
                *gd += x;
            }
        }
    }

    if !items.is_empty() {
        let t = items.len() as f64;
        let b = e_v.select_rows(items);
        let hu = weighted(e_u, h);
        let rt = hu.matmul_nt(&b)?.map(sigmoid);
        let q = rt.matmul_tn(e_u)?;
        let w_hat = b.matmul_nt(&q)?;
        let target = w_v.dense_submatrix(items, items);
        let (l, mut g) = constraint_kl(&target, &w_hat)?;
        loss += l / t;
        g.scale(1.0 / t);

        let mut d_b = g.matmul(&q)?;
        let d_q = g.matmul_tn(&b)?;
        let d_rt = e_u.matmul_nt(&d_q)?;
        grad_e_u.axpy(1.0, &rt.matmul(&d_q)?)?;
        let mut d_y = d_rt;
        for (dy, r) in d_y.as_mut_slice().iter_mut().zip(rt.as_slice()) {
            *dy *= r * (1.0 - r);
        }
        let d_hu = d_y.matmul(&b)?;
        d_b.axpy(1.0, &d_y.matmul_tn(&hu)?)?;
        grad_e_u.axpy(1.0, &weighted(&d_hu, h))?;
        grad_h.axpy(1.0, &d_hu.hadamard(e_u)?.column_sums())?;
        for (k, &i) in items.iter().enumerate() {
            for (gd, x) in grad_e_v.row_mut(i).iter_mut().zip(d_b.row(k)) {
                *gd += x;
            }
        }
    }

    Ok(ConstraintOutput {
        loss,
        grad_e_u,
        grad_e_v,
        grad_h,
    })
}
