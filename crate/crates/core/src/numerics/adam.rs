use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{MrtError, Result};

/// Adam optimizer state for one [`ParamStore`].
///
/// Moments are allocated lazily on the first step and indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Restores a saved state; moment shapes are validated on the next step.
    pub fn restore(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    fn ensure_moments(&mut self, store: &ParamStore) -> Result<()> {
        if self.m.is_empty() && self.v.is_empty() {
            self.m = store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
            return Ok(());
        }
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(MrtError::invalid(format!(
                "optimizer state tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((p, m), v) in store.iter().zip(&self.m).zip(&self.v) {
            p.value.same_shape("adam moments", m)?;
            p.value.same_shape("adam moments", v)?;
        }
        Ok(())
    }

    /// Applies one bias-corrected update to every parameter, then zeroes the
    /// gradients. Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(MrtError::Numerical(format!(
                "non-finite gradient in parameter {}",
                bad.name
            )));
        }
        self.ensure_moments(store)?;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.step(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new([2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap())
            .unwrap();
        let before = s.get(s.find("a").unwrap()).value.clone();
        let mut adam = AdamState::new(0.1);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get(s.find("a").unwrap()).value, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn moves_against_constant_gradient() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = AdamState::new(0.01);
        for _ in 0..20 {
            s.get_mut(id).grad = Tensor::scalar(3.0);
            adam.step(&mut s).unwrap();
        }
        assert!(s.value(id).data()[0] < 0.0);
    }

    #[test]
    fn quadratic_matches_scalar_reference() {
        // hand-rolled scalar Adam on f(w) = w²
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            trace.push(w);
        }

        let (mut s, id) = scalar_store(1.0);
        let mut adam = AdamState::new(0.1);
        let mut prev = 1.0f64;
        for expected in trace {
            let w = s.value(id).data()[0];
            s.get_mut(id).grad = Tensor::scalar(2.0 * w);
            adam.step(&mut s).unwrap();
            let w = s.value(id).data()[0];
            assert!((w - expected).abs() < 1e-15);
            assert!(w.abs() < prev.abs());
            prev = w;
        }
        assert!(s.get(id).grad.data()[0] == 0.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = scalar_store(1.0);
        s.get_mut(id).grad = Tensor::scalar(f64::NAN);
        let err = AdamState::new(0.1).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("w"), "{err}");
        assert_eq!(s.value(id).data()[0], 1.0);
    }
}
