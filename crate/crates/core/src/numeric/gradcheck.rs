//! Central-difference gradient checking.
//!
//! Every hand-derived backward pass in the crate is validated against this.

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::rng::Rng;

/// Which coordinates to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    /// Every scalar of every parameter.
    All,
    /// At most this many random coordinates per parameter.
    Sample(usize),
}

/// Compares the gradients already stored in `store` against central
/// differences of `loss` and returns the worst
/// `|analytic - numeric| / max(1, |analytic|)` over the probed coordinates.
///
/// `loss` receives perturbed copies of the store; the original is not touched.
pub fn finite_diff_check<F>(
    loss: F,
    store: &ParamStore,
    h: f64,
    coords: Coords,
    rng: &mut Rng,
) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::GradCheck(format!("step must be positive, got {h}")));
    }
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let n = store.value(id).as_slice().len();
        let picks: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample(k) => rng.choose_distinct(n, k),
        };
        for k in picks {
            let x0 = store.value(id).as_slice()[k];
            probe.value_mut(id).as_mut_slice()[k] = x0 + h;
            let up = loss(&probe)?;
            probe.value_mut(id).as_mut_slice()[k] = x0 - h;
            let down = loss(&probe)?;
            probe.value_mut(id).as_mut_slice()[k] = x0;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::GradCheck(format!(
                    "loss not finite at {}[{k}]",
                    store.name(id)
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.grad(id).as_slice()[k];
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            if err > worst {
                log::trace!(
                    "{}[{k}]: analytic {analytic:e} numeric {numeric:e}",
                    store.name(id)
                );
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Scalar version for one-dimensional functions.
pub fn scalar_check(f: impl Fn(f64) -> f64, analytic: f64, x: f64, h: f64) -> f64 {
    let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}
