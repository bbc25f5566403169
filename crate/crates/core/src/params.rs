//! Flat parameter storage shared by all network layers.
//!
//! Parameters live in one ordered map keyed by hierarchical names
//! (`"stage1.block0.conv1.w"`). Layers hold indices into the store, the
//! optimizer walks the entries in registration order, and checkpoints dump
//! the map wholesale. Non-trainable entries carry state such as batch-norm
//! running statistics.

use indexmap::IndexMap;
use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::nn::Real;

pub struct ParamEntry<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    pub momentum: ArrayD<F>,
    /// Weight decay applies to this entry.
    pub decay: bool,
    /// SGD updates this entry.
    pub trainable: bool,
}

pub struct ParamStore<F> {
    entries: IndexMap<String, ParamEntry<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    /// Registers a parameter array and returns its index. Names are unique.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: ArrayD<F>,
        decay: bool,
        trainable: bool,
    ) -> usize {
        let name = name.into();
        let grad = ArrayD::zeros(value.raw_dim());
        let momentum = ArrayD::zeros(value.raw_dim());
        let entry = ParamEntry {
            value,
            grad,
            momentum,
            decay,
            trainable,
        };
        let (index, old) = self.entries.insert_full(name.clone(), entry);
        assert!(old.is_none(), "duplicate parameter name {name}");
        index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &ParamEntry<F> {
        self.entries
            .get_index(id)
            .map(|(_, e)| e)
            .expect("parameter id out of range")
    }

    pub fn entry_mut(&mut self, id: usize) -> &mut ParamEntry<F> {
        self.entries
            .get_index_mut(id)
            .map(|(_, e)| e)
            .expect("parameter id out of range")
    }

    pub fn name(&self, id: usize) -> &str {
        self.entries.get_index(id).map(|(n, _)| n.as_str()).unwrap()
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<F>> {
        self.entries.get(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<F>)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn zero_grads(&mut self) {
        for (_, e) in self.entries.iter_mut() {
            e.grad.fill(F::zero());
        }
    }

    /// SGD with momentum: `v <- mu*v + g + wd*w; w <- w - lr*v`.
    /// Weight decay is skipped for entries registered with `decay = false`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, weight_decay: f64) {
        let lr = F::from_f64(lr);
        let mu = F::from_f64(momentum);
        let wd = F::from_f64(weight_decay);
        for (_, e) in self.entries.iter_mut() {
            if !e.trainable {
                continue;
            }
            let decay = if e.decay { wd } else { F::zero() };
            for ((v, g), w) in e
                .momentum
                .iter_mut()
                .zip(e.grad.iter())
                .zip(e.value.iter_mut())
            {
                *v = mu * *v + *g + decay * *w;
                *w = *w - lr * *v;
            }
        }
    }

    /// SHA-256 over the raw bits of every value array, in registration order.
    /// Used to assert that frozen networks stay untouched.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, e) in self.entries.iter() {
            hasher.update(name.as_bytes());
            for v in e.value.iter() {
                hasher.update(v.to_f64().to_bits().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn sgd_momentum_and_decay() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let w = store.register("w", ArrayD::from_elem(vec![1], 1.0), true, true);
        let p = store.register("p", ArrayD::from_elem(vec![1], 1.0), false, true);
        store.entry_mut(w).grad.fill(0.5);
        store.entry_mut(p).grad.fill(0.5);
        store.sgd_step(0.1, 0.9, 0.01);
        // v = 0.5 + 0.01*1.0 = 0.51; w = 1 - 0.051
        assert!((store.entry(w).value[0] - 0.949).abs() < 1e-12);
        // no decay: v = 0.5; p = 1 - 0.05
        assert!((store.entry(p).value[0] - 0.95).abs() < 1e-12);
        // second step folds momentum in
        store.entry_mut(w).grad.fill(0.0);
        store.sgd_step(0.1, 0.9, 0.0);
        let v = 0.9 * 0.51;
        assert!((store.entry(w).value[0] - (0.949 - 0.1 * v)).abs() < 1e-12);
    }

    #[test]
    fn digest_tracks_values() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.register("a", ArrayD::from_elem(vec![2, 2], 1.0f32), true, true);
        let d1 = store.digest();
        let d2 = store.digest();
        assert_eq!(d1, d2);
        store.entry_mut(0).value[[0, 0]] = 2.0;
        assert_ne!(d1, store.digest());
    }
}
