//! Deterministic numeric core: dense and sparse kernels, parameter storage
//! with Adam, seeded randomness, gradient checking and checkpoints.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod sparse;

pub use checkpoint::Checkpoint;
pub use dense::{dot, gemm, DenseMatrix, Trans};
pub use gradcheck::{finite_diff_check, Coords};
pub use params::{AdamConfig, Param, ParamId, ParamStore};
pub use rng::{glorot_bound, Rng};
pub use sparse::{spmm, SparseMatrix};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// In-place log-softmax of a row.
pub fn log_softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|x| *x -= lse);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_scalars() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        let mut r = [1.0, 2.0, 3.0];
        log_softmax_inplace(&mut r);
        let s: f64 = r.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
