//! Trainable parameters and the Adam optimizer.
//!
//! A [`ParamStore`] owns every weight of a model together with its gradient
//! and Adam moment buffers. Parameter values sit behind `Arc` so a recording
//! tape can reference them without copying matrices per instance; the
//! optimizer unshares in place once all tapes from the step are dropped.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One trainable tensor with its gradient and Adam state.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Arc<Tensor>,
    pub gradient: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

/// Adam hyperparameters. `Default` gives the optimizer's canonical settings.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Registry of all parameters of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter with explicit initial values.
    ///
    /// Panics on duplicate names; parameter names are the checkpoint keys and
    /// must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.clone(),
            value: Arc::new(value),
            gradient: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        });
        self.by_name.insert(name, id);
        id
    }

    /// Register a parameter initialized uniformly in `[-scale, scale]`.
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.register(name, Tensor::new(shape, data).expect("shape/data agree"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor> {
        &self.params[id.0].value
    }

    /// Mutable view of a parameter's values, for loading checkpoints or tests.
    /// Unshares if a tape still holds the tensor.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn gradient(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].gradient
    }

    pub(crate) fn gradient_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].gradient
    }

    /// Reset every gradient to exactly zero.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient.fill(0.0);
        }
    }

    /// One Adam update with bias correction over all parameters.
    ///
    /// Gradients are left untouched; the caller zeroes them between steps so
    /// that several backward passes can accumulate into one update.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in &mut self.params {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let value = Arc::make_mut(&mut p.value);
            let g = p.gradient.data();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for ((x, g), (m, v)) in value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(v: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::scalar(v));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let (mut store, id) = scalar_store(0.25);
        store.adam_step(&AdamConfig::default());
        assert_eq!(store.value(id).item(), 0.25);
        assert_eq!(store.get(id).step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // grad = 1 at step 1: m_hat = 1, v_hat = 1, so the update is
        // lr * 1 / (1 + eps) which is 0.001 up to eps.
        let (mut store, id) = scalar_store(1.0);
        store.gradient_mut(id).data_mut()[0] = 1.0;
        store.adam_step(&AdamConfig::default());
        let moved = 1.0 - store.value(id).item();
        assert!((moved - 0.001).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn two_steps_match_scripted_adam() {
        // Hand-rolled Adam over two identical steps with grad 0.5, computed
        // independently below with plain arithmetic.
        let cfg = AdamConfig::default();
        let (mut store, id) = scalar_store(2.0);

        let mut x = 2.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=2 {
            let g = 0.5;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        for _ in 0..2 {
            store.gradient_mut(id).data_mut()[0] = 0.5;
            store.adam_step(&cfg);
            store.zero_grad();
        }
        assert_eq!(store.value(id).item(), x);
    }

    #[test]
    fn uniform_init_is_seed_deterministic_and_bounded() {
        let build = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let id = store.register_uniform("w", vec![4, 3], 0.08, &mut rng);
            store.value(id).data().to_vec()
        };
        let a = build(7);
        let b = build(7);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.abs() <= 0.08));
        assert_ne!(a, build(8));
    }

    #[test]
    fn zero_grad_resets_exactly() {
        let (mut store, id) = scalar_store(0.0);
        store.gradient_mut(id).data_mut()[0] = 3.5;
        store.zero_grad();
        assert_eq!(store.gradient(id).data(), &[0.0]);
    }
}
