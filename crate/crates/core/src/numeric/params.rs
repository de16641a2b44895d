use crate::error::{Error, Result};

use super::dense::DenseMatrix;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub m: DenseMatrix,
    pub v: DenseMatrix,
}

/// Named trainable tensors with gradient and Adam moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        let (r, c) = value.shape();
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            grad: DenseMatrix::zeros(r, c),
            m: DenseMatrix::zeros(r, c),
            v: DenseMatrix::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.params[id.0].grad
    }

    /// Adds `g` into the gradient buffer of `id`.
    pub fn accumulate(&mut self, id: ParamId, g: &DenseMatrix) -> Result<()> {
        self.params[id.0].grad.axpy(1.0, g)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    /// One bias-corrected Adam update on every parameter, then zeroes the
    /// gradients and increments the step counter.
    ///
    /// A non-finite gradient aborts before anything is modified.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Divergence {
                name: p.name.clone(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let value = p.value.as_mut_slice();
            let grad = p.grad.as_mut_slice();
            let m = p.m.as_mut_slice();
            let v = p.v.as_mut_slice();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", DenseMatrix::row_vector(&[x]));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(2.5);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).get(0, 0), 2.5);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        s.grad_mut(id).set(0, 0, 1.0);
        let cfg = AdamConfig {
            eps: 0.0,
            ..AdamConfig::default()
        };
        s.adam_step(&cfg).unwrap();
        assert!((s.value(id).get(0, 0) + 0.001).abs() < 1e-15);
        assert_eq!(s.grad(id).get(0, 0), 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id).set(0, 0, f64::NAN);
        match s.adam_step(&AdamConfig::default()) {
            Err(Error::Divergence { name }) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.step(), 0);
        assert_eq!(s.value(id).get(0, 0), 1.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut s, id) = scalar_store(0.3);
        s.grad_mut(id).set(0, 0, -4.0);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        s.adam_step(&cfg).unwrap();
        assert_eq!(s.value(id).get(0, 0), 0.3);
    }

    #[test]
    fn identical_states_step_identically() {
        let (mut a, id) = scalar_store(0.7);
        a.grad_mut(id).set(0, 0, 0.25);
        let mut b = a.clone();
        a.adam_step(&AdamConfig::default()).unwrap();
        b.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
