use crate::error::{shape_err, Error, Result};

use super::dense::DenseMatrix;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within a row and no stored value is
/// zero or non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets in any order. Duplicates are
    /// summed; entries that end up zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &t {
            if r >= rows || c >= cols {
                return Err(shape_err(
                    "SparseMatrix::from_triplets",
                    format!("entry ({r}, {c}) outside {rows}x{cols}"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    layer: "sparse triplet".into(),
                });
            }
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((c, v), r) in indices.into_iter().zip(values).zip(row_of) {
            if v != 0.0 {
                keep_idx.push(c);
                keep_val.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices: keep_idx,
            values: keep_val,
        })
    }

    /// Builds from raw CSR arrays, validating every layout invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |d: String| Err(shape_err("SparseMatrix::from_csr", d));
        if indptr.len() != rows + 1 || indptr[0] != 0 {
            return bad(format!("indptr length {} for {rows} rows", indptr.len()));
        }
        if indices.len() != values.len() || *indptr.last().unwrap() != indices.len() {
            return bad("indptr/indices/values lengths disagree".into());
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return bad(format!("indptr decreases at row {r}"));
            }
            let cols_r = &indices[indptr[r]..indptr[r + 1]];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("column indices not strictly increasing in row {r}"));
            }
            if cols_r.iter().any(|&c| c >= cols) {
                return bad(format!("column index out of range in row {r}"));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return bad("explicit zero or non-finite value".into());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values stored in row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, val) = self.row(r);
        match idx.binary_search(&c) {
            Ok(k) => val[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, val) = self.row(r);
            idx.iter().zip(val).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    /// Same sparsity pattern with each stored value replaced by `f(row, col, value)`.
    /// Entries mapped to zero are removed.
    pub fn map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> SparseMatrix {
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                let nv = f(r, c, v);
                if nv != 0.0 {
                    indices.push(c);
                    values.push(nv);
                }
            }
            indptr[r + 1] = indices.len();
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    /// Sparse · sparse product, exact for integer-valued inputs.
    pub fn matmul_sparse(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul_sparse",
                format!("{}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut acc = vec![0.0f64; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.cols];
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            let (ia, va) = self.row(r);
            for (&k, &a) in ia.iter().zip(va) {
                let (ib, vb) = other.row(k);
                for (&c, &b) in ib.iter().zip(vb) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                if acc[c] != 0.0 {
                    indices.push(c);
                    values.push(acc[c]);
                }
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
            indptr[r + 1] = indices.len();
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Dense principal-style submatrix `self[row_idx, col_idx]`.
    pub fn dense_submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> DenseMatrix {
        let mut pos = vec![usize::MAX; self.cols];
        for (k, &c) in col_idx.iter().enumerate() {
            pos[c] = k;
        }
        let mut out = DenseMatrix::zeros(row_idx.len(), col_idx.len());
        for (i, &r) in row_idx.iter().enumerate() {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                if pos[c] != usize::MAX {
                    out.set(i, pos[c], v);
                }
            }
        }
        out
    }
}

/// Sparse · dense product. Each output row accumulates the stored entries of
/// the matching input row in column order, so the result is deterministic.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    spmm_into(a, b, &mut out)?;
    Ok(out)
}

/// `out = a · b`, overwriting `out`.
pub fn spmm_into(a: &SparseMatrix, b: &DenseMatrix, out: &mut DenseMatrix) -> Result<()> {
    if a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols() {
        return Err(shape_err(
            "spmm",
            format!(
                "{}x{} · {}x{} -> {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                out.rows(),
                out.cols()
            ),
        ));
    }
    out.fill(0.0);
    for r in 0..a.rows() {
        let (idx, val) = a.row(r);
        let dst = out.row_mut(r);
        for (&c, &v) in idx.iter().zip(val) {
            for (d, s) in dst.iter_mut().zip(b.row(c)) {
                *d += v * s;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_identity_zero_and_swap() {
        let b = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(spmm(&SparseMatrix::identity(2), &b).unwrap(), b);
        assert_eq!(
            spmm(&SparseMatrix::zeros(2, 2), &b).unwrap(),
            DenseMatrix::zeros(2, 2)
        );
        let swap = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let got = spmm(&swap, &b).unwrap();
        assert_eq!(got, DenseMatrix::from_rows(&[&[3.0, 4.0], &[1.0, 2.0]]));
    }

    #[test]
    fn spmm_rejects_bad_shapes() {
        let a = SparseMatrix::identity(3);
        assert!(spmm(&a, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, 3, [(1, 2, 1.0), (0, 0, 2.0), (1, 2, 1.0), (0, 1, 0.0)])
            .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert!(SparseMatrix::from_triplets(1, 1, [(1, 0, 1.0)]).is_err());
    }

    #[test]
    fn from_csr_validates_layout() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![1], vec![0.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![0, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn transpose_and_sparse_product() {
        let r = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]).unwrap();
        let rt = r.transpose();
        assert_eq!(rt.to_dense(), r.to_dense().transpose());
        let wu = r.matmul_sparse(&rt).unwrap();
        assert_eq!(wu.to_dense(), DenseMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn dense_submatrix_picks_entries() {
        let r = SparseMatrix::from_triplets(3, 3, [(0, 2, 5.0), (2, 0, 7.0)]).unwrap();
        let s = r.dense_submatrix(&[2, 0], &[0, 2]);
        assert_eq!(s, DenseMatrix::from_rows(&[&[7.0, 0.0], &[0.0, 5.0]]));
    }
}
