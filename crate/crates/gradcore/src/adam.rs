//! Bias-corrected Adam over a parameter store.

use crate::error::GradError;
use crate::real::Real;
use crate::store::ParamStore;
use crate::tensor::Tensor;
use crate::Result;
use indexmap::IndexMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per trainable parameter plus step count.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: IndexMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            moments: IndexMap::new(),
        }
    }

    /// One update over every trainable entry in the store. Every trainable
    /// parameter must carry a gradient; grads are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let lr = F::from_f64(c.learning_rate);
        let b1 = F::from_f64(c.beta1);
        let b2 = F::from_f64(c.beta2);
        let eps = F::from_f64(c.epsilon);
        let bc1 = F::one() - F::from_f64(c.beta1.powi(t));
        let bc2 = F::one() - F::from_f64(c.beta2.powi(t));

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.get(id).trainable {
                continue;
            }
            let name = store.get(id).name.clone();
            let entry = store.get_mut(id);
            let grad = entry
                .tensor
                .grad
                .take()
                .ok_or_else(|| GradError::MissingGradient(name.clone()))?;
            let numel = entry.tensor.data.len();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![F::zero(); numel], vec![F::zero(); numel]));
            for i in 0..numel {
                let g = grad[i];
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                entry.tensor.data[i] =
                    entry.tensor.data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors for resumable checkpoints.
    pub fn export_tensors(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        for (name, (m, v)) in &self.moments {
            out.push((
                format!("optim.m.{name}"),
                Tensor::new(vec![m.len()], m.clone()).expect("moment shape"),
            ));
            out.push((
                format!("optim.v.{name}"),
                Tensor::new(vec![v.len()], v.clone()).expect("moment shape"),
            ));
        }
        out
    }

    pub fn import_tensors(
        &mut self,
        tensors: &[(String, Tensor<F>)],
        step_count: u64,
    ) -> Result<()> {
        self.step_count = step_count;
        self.moments.clear();
        let mut halves: IndexMap<String, (Option<Vec<F>>, Option<Vec<F>>)> = IndexMap::new();
        for (name, t) in tensors {
            if let Some(p) = name.strip_prefix("optim.m.") {
                halves.entry(p.to_string()).or_default().0 = Some(t.data.clone());
            } else if let Some(p) = name.strip_prefix("optim.v.") {
                halves.entry(p.to_string()).or_default().1 = Some(t.data.clone());
            }
        }
        for (name, (m, v)) in halves {
            match (m, v) {
                (Some(m), Some(v)) => {
                    self.moments.insert(name, (m, v));
                }
                _ => {
                    return Err(GradError::Checkpoint(format!(
                        "optimizer state for `{name}` is incomplete"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .register("w", Tensor::scalar(v), true)
            .unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = scalar_store(1.5);
        store.get_mut(id).tensor.grad = Some(vec![0.0]);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.001));
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).tensor.data[0], 1.5);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let (mut store, id) = scalar_store(1.0);
        store.get_mut(id).tensor.grad = Some(vec![0.3]);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.001));
        adam.step(&mut store).unwrap();
        let delta = (1.0 - store.get(id).tensor.data[0]).abs();
        // bias-corrected first step: lr * g / (|g| + eps)
        assert!((delta - 0.001).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn two_steps_on_quadratic_decrease_parameter() {
        // independent hand-rolled oracle of the same update rule
        fn oracle(w0: f64, lr: f64, steps: usize) -> f64 {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
            for t in 1..=steps {
                let g = 2.0 * w;
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mhat = m / (1.0 - b1.powi(t as i32));
                let vhat = v / (1.0 - b2.powi(t as i32));
                w -= lr * mhat / (vhat.sqrt() + eps);
            }
            w
        }
        let (mut store, id) = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.05));
        let mut prev = 1.0;
        for step in 1..=2 {
            let w = store.get(id).tensor.data[0];
            store.get_mut(id).tensor.grad = Some(vec![2.0 * w]);
            adam.step(&mut store).unwrap();
            let cur = store.get(id).tensor.data[0];
            assert!(cur < prev, "step {step}: {cur} !< {prev}");
            assert!((cur - oracle(1.0, 0.05, step)).abs() < 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let (mut store, _id) = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.001));
        let err = adam.step(&mut store).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }
}
