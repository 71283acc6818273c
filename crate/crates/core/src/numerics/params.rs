//! Named parameter tensors with per-parameter optimizer state.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::NumericsError;

/// One named parameter plus its Adam accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub trainable: bool,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl ParamEntry {
    fn fresh(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            trainable: true,
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// Insertion is name-keyed; iteration is name-ordered, which fixes the
/// reduction and update order across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

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
            lr: 5e-4,
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

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        if self.entries.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.entries.insert(name.to_string(), ParamEntry::fresh(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.entries[name].value
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) {
        let e = self.entries.get_mut(name).expect("unknown parameter");
        assert_eq!(e.value.shape(), value.shape(), "parameter shape change");
        e.value = value;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Set the trainable flag on every parameter whose name matches the
    /// predicate; returns how many were touched.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) -> usize {
        let mut n = 0;
        for (name, entry) in self.entries.iter_mut() {
            if pred(name) {
                entry.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.set_trainable_where(|_| true, trainable);
    }

    /// Bias-corrected Adam update on trainable parameters only. A trainable
    /// parameter missing from `grads` is treated as zero-gradient (its step
    /// count still advances).
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<(), NumericsError> {
        for (name, g) in grads {
            let entry = self
                .entries
                .get(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
            if entry.trainable && g.shape() != entry.value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    context: "adam_step",
                    expected: format!("{:?} for {name}", entry.value.shape()),
                    got: format!("{:?}", g.shape()),
                });
            }
        }
        for (name, entry) in self.entries.iter_mut() {
            if !entry.trainable {
                continue;
            }
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let zero;
            let g = match grads.get(name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(entry.value.shape().to_vec());
                    &zero
                }
            };
            for i in 0..entry.value.len() {
                let gi = g.data()[i];
                let m = cfg.beta1 * entry.m.data()[i] + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * entry.v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                entry.m.data_mut()[i] = m;
                entry.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                entry.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
