//! Gradient-descent parameter updates.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// State for plain gradient descent with optional classical momentum.
///
/// With `momentum == 0` the update is `p -= lr * g`. Otherwise a velocity
/// buffer per parameter follows `v = momentum * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
    steps: u64,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(OptimState { learning_rate, momentum, velocity: BTreeMap::new(), steps: 0 })
    }

    /// Number of completed [`OptimState::step`] calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every named parameter. `grads` must hold an
    /// entry of matching length for each parameter.
    pub fn step<'a, I>(&mut self, params: I, grads: &BTreeMap<String, Vec<f64>>) -> Result<()>
    where
        I: Iterator<Item = (&'a String, &'a mut Tensor)>,
    {
        for (name, param) in params {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::Usage(format!("optim_step: missing grad for {name}")))?;
            if grad.len() != param.numel() {
                return Err(Error::Dim(format!(
                    "optim_step: grad len {} vs param {} for {name}",
                    grad.len(),
                    param.numel()
                )));
            }
            let lr = self.learning_rate;
            if self.momentum == 0.0 {
                for (p, &g) in param.data_mut().iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            } else {
                let vel = self
                    .velocity
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; grad.len()]);
                let mu = self.momentum;
                for ((p, v), &g) in param.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn one_param(value: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("p".to_string(), Tensor::scalar(value));
        m
    }

    #[test]
    fn plain_step() {
        let mut params = one_param(1.0);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![1.0]);
        let mut st = OptimState::new(0.1, 0.0).unwrap();
        st.step(params.iter_mut(), &grads).unwrap();
        assert_eq!(params["p"].data()[0], 0.9);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut params = one_param(2.5);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![0.0]);
        let mut st = OptimState::new(0.5, 0.9).unwrap();
        st.step(params.iter_mut(), &grads).unwrap();
        assert_eq!(params["p"].data()[0], 2.5);
    }

    #[test]
    fn missing_grad_is_usage_error() {
        let mut params = one_param(1.0);
        let grads = BTreeMap::new();
        let mut st = OptimState::new(0.1, 0.0).unwrap();
        assert!(st.step(params.iter_mut(), &grads).is_err());
    }

    #[test]
    fn quadratic_converges_by_geometric_decay() {
        // f(p) = (p - 3)^2, grad = 2 (p - 3); lr 0.1 contracts the error by
        // 0.8 per step, so 50 steps from 0 leave |p - 3| = 3 * 0.8^50 < 1e-3.
        let mut params = one_param(0.0);
        let mut st = OptimState::new(0.1, 0.0).unwrap();
        for _ in 0..50 {
            let p = params["p"].data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), vec![2.0 * (p - 3.0)]);
            st.step(params.iter_mut(), &grads).unwrap();
        }
        assert!((params["p"].data()[0] - 3.0).abs() < 1e-3);
        assert_eq!(st.steps(), 50);
    }
}
