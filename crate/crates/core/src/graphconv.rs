//! Bipartite adjacency, symmetric degree normalization, parameter-free
//! propagation, layer averaging and the inner-product rating matrix.

use crate::error::{shape_err, Result};
use crate::numeric::{spmm, DenseMatrix, Rng, SparseMatrix};

/// User-item graph over `M + N` nodes: users first, then items.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub n_users: usize,
    pub n_items: usize,
    /// `[[0, R], [Rᵀ, 0]]`
    pub adjacency: SparseMatrix,
    /// `D^{-1/2} A D^{-1/2}`
    pub normalized: SparseMatrix,
    pub degrees: Vec<f64>,
}

impl BipartiteGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Normalized adjacency with symmetric edge dropout: each undirected edge
    /// is kept with probability `1 - rate` and survivors are rescaled by
    /// `1 / (1 - rate)`. Degrees are not recomputed.
    pub fn dropped(&self, rate: f64, rng: &mut Rng) -> SparseMatrix {
        if rate <= 0.0 {
            return self.normalized.clone();
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let m = self.n_users;
        // One draw per user->item entry, mirrored onto item->user.
        let mut kept = std::collections::HashSet::new();
        for u in 0..m {
            let (idx, _) = self.normalized.row(u);
            for &c in idx {
                if !rng.bernoulli(rate) {
                    kept.insert((u, c));
                }
            }
        }
        self.normalized.map_entries(|r, c, v| {
            let key = if r < m { (r, c) } else { (c, r) };
            if kept.contains(&key) {
                v * keep_scale
            } else {
                0.0
            }
        })
    }
}

/// Builds the block adjacency of a binary `M x N` interaction matrix and its
/// normalization.
pub fn build_adjacency(r: &SparseMatrix) -> BipartiteGraph {
    let (m, n) = (r.rows(), r.cols());
    let triplets = r
        .iter()
        .flat_map(|(u, i, v)| [(u, m + i, v), (m + i, u, v)]);
    let adjacency =
        SparseMatrix::from_triplets(m + n, m + n, triplets).expect("indices are in range");
    let degrees = adjacency.row_sums();
    let normalized = normalize(&adjacency);
    BipartiteGraph {
        n_users: m,
        n_items: n,
        adjacency,
        normalized,
        degrees,
    }
}

/// Scales every stored entry by `1 / sqrt(d_row * d_col)`. Zero-degree nodes
/// keep all-zero rows and columns.
pub fn normalize(a: &SparseMatrix) -> SparseMatrix {
    let deg = a.row_sums();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    a.map_entries(|r, c, v| v * inv_sqrt[r] * inv_sqrt[c])
}

/// `H^0 = E`, `H^l = Ã H^{l-1}` for `l = 1..=layers`.
pub fn propagate(norm: &SparseMatrix, e: &DenseMatrix, layers: usize) -> Result<Vec<DenseMatrix>> {
    if norm.rows() != norm.cols() || norm.cols() != e.rows() {
        return Err(shape_err(
            "propagate",
            format!(
                "adjacency {}x{}, embeddings {}x{}",
                norm.rows(),
                norm.cols(),
                e.rows(),
                e.cols()
            ),
        ));
    }
    let mut out = Vec::with_capacity(layers + 1);
    out.push(e.clone());
    for l in 0..layers {
        let next = spmm(norm, &out[l])?;
        out.push(next);
    }
    Ok(out)
}

/// Elementwise mean over layers.
pub fn pool(layers: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = layers
        .first()
        .ok_or_else(|| shape_err("pool", "no layers"))?;
    let mut acc = first.clone();
    for l in &layers[1..] {
        acc.axpy(1.0, l)?;
    }
    acc.scale(1.0 / layers.len() as f64);
    Ok(acc)
}

/// Gradient of `pool(propagate(norm, E, layers))` with respect to `E`, given
/// the gradient of the pooled output. `norm` must be symmetric.
pub fn propagate_pool_backward(
    norm: &SparseMatrix,
    grad_pooled: &DenseMatrix,
    layers: usize,
) -> Result<DenseMatrix> {
    let mut g = grad_pooled.clone();
    let mut acc = grad_pooled.clone();
    for _ in 0..layers {
        g = spmm(norm, &g)?;
        acc.axpy(1.0, &g)?;
    }
    acc.scale(1.0 / (layers + 1) as f64);
    Ok(acc)
}

/// Splits pooled node embeddings into the user block and the item block.
pub fn split_nodes(e: &DenseMatrix, n_users: usize) -> (DenseMatrix, DenseMatrix) {
    (e.row_block(0, n_users), e.row_block(n_users, e.rows()))
}

/// `P = e_u · e_vᵀ`, the `M x N` latent rating matrix.
pub fn score_matrix(e_u: &DenseMatrix, e_v: &DenseMatrix) -> Result<DenseMatrix> {
    if e_u.cols() != e_v.cols() {
        return Err(shape_err(
            "score_matrix",
            format!("user dim {} vs item dim {}", e_u.cols(), e_v.cols()),
        ));
    }
    e_u.matmul_nt(e_v)
}

/// Largest absolute eigenvalue estimate of a symmetric matrix by power iteration.
pub fn spectral_radius(a: &SparseMatrix, iters: usize, rng: &mut Rng) -> f64 {
    let n = a.rows();
    if n == 0 {
        return 0.0;
    }
    let mut v = rng.sample_gaussian(n, 1);
    let mut lambda = 0.0;
    for _ in 0..iters {
        // Iterate on A² so that ±λ pairs (bipartite spectra) converge.
        let w = spmm(a, &spmm(a, &v).expect("square")).expect("square");
        let norm = w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let vnorm = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = (norm / vnorm).sqrt();
        v = w;
        v.scale(1.0 / norm);
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r_of(m: usize, n: usize, pairs: &[(usize, usize)]) -> SparseMatrix {
        SparseMatrix::from_triplets(m, n, pairs.iter().map(|&(u, i)| (u, i, 1.0))).unwrap()
    }

    #[test]
    fn single_edge_adjacency() {
        let g = build_adjacency(&r_of(1, 1, &[(0, 0)]));
        assert_eq!(g.adjacency.to_dense(), DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(g.normalized, g.adjacency);
    }

    #[test]
    fn degrees_and_symmetry() {
        let r = r_of(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        let g = build_adjacency(&r);
        assert_eq!(g.adjacency.nnz(), 2 * r.nnz());
        assert_eq!(g.degrees, vec![2.0, 1.0, 1.0, 2.0]);
        assert!(g.adjacency.is_symmetric());
        assert!(g.normalized.is_symmetric());
    }

    #[test]
    fn shared_item_normalization() {
        let g = build_adjacency(&r_of(2, 1, &[(0, 0), (1, 0)]));
        let expect = 1.0 / 2f64.sqrt();
        assert!((g.normalized.get(0, 2) - expect).abs() < 1e-15);
        assert!((g.normalized.get(2, 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_stays_zero() {
        let g = build_adjacency(&r_of(2, 2, &[(0, 0)]));
        assert_eq!(g.normalized.row_nnz(1), 0);
        assert_eq!(g.normalized.row_nnz(3), 0);
        assert!(g.normalized.iter().all(|(r, c, _)| r != 3 && c != 3));
    }

    #[test]
    fn propagation_examples() {
        let e = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = build_adjacency(&r_of(1, 1, &[(0, 0)]));
        let layers = propagate(&g.normalized, &e, 0).unwrap();
        assert_eq!(layers, vec![e.clone()]);
        let layers = propagate(&g.normalized, &e, 1).unwrap();
        assert_eq!(layers[1], DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let id = propagate(&SparseMatrix::identity(2), &e, 3).unwrap();
        assert!(id.iter().all(|h| *h == e));
        assert!(propagate(&g.normalized, &DenseMatrix::zeros(3, 2), 1).is_err());
    }

    #[test]
    fn pool_means() {
        let a = DenseMatrix::from_rows(&[&[1.0]]);
        let b = DenseMatrix::from_rows(&[&[3.0]]);
        assert_eq!(pool(&[a.clone()]).unwrap(), a);
        assert_eq!(pool(&[a.clone(), b.clone()]).unwrap().get(0, 0), 2.0);
        assert_eq!(pool(&[b, a]).unwrap().get(0, 0), 2.0);
        assert!(pool(&[]).is_err());
    }

    #[test]
    fn scores() {
        let p = score_matrix(
            &DenseMatrix::from_rows(&[&[1.0, 0.0], &[1.0, 2.0]]),
            &DenseMatrix::from_rows(&[&[0.0, 1.0], &[3.0, 4.0]]),
        )
        .unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(1, 1), 11.0);
        let unit = DenseMatrix::row_vector(&[0.6, 0.8]);
        assert!((score_matrix(&unit, &unit).unwrap().get(0, 0) - 1.0).abs() < 1e-15);
        assert!(score_matrix(&unit, &DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn dropout_keeps_symmetry() {
        let mut pairs = Vec::new();
        for u in 0..6 {
            for i in 0..5 {
                if (u + i) % 2 == 0 {
                    pairs.push((u, i));
                }
            }
        }
        let g = build_adjacency(&r_of(6, 5, &pairs));
        let d = g.dropped(0.5, &mut Rng::new(4));
        assert!(d.is_symmetric());
        assert!(d.nnz() < g.normalized.nnz());
        assert_eq!(g.dropped(0.0, &mut Rng::new(4)), g.normalized);
    }
}
