use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{config, usage, Result};
use crate::{Tape, Tensor};

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return usage(format!("parameter {name:?} already exists"));
        }
        self.params.insert(name, value.detach());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| crate::Error::Usage(format!("unknown parameter {name:?}")))
    }

    /// Replace the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| crate::Error::Usage(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return config(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            ));
        }
        *slot = value.detach();
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    /// Add `{prefix}.weight` (out, in, k, k) drawn from U(±1/√(in·k·k)) and a
    /// zero `{prefix}.bias`.
    pub fn init_conv<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        cout: usize,
        cin: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<()> {
        if cout == 0 || cin == 0 || k == 0 {
            return config(format!("{prefix}: empty convolution {cout}x{cin}x{k}x{k}"));
        }
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -bound, bound, rng);
        self.insert(format!("{prefix}.weight"), w)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]))
    }

    /// Register every parameter on `tape`.
    pub fn bind(&self, tape: &Tape) -> Result<Bound> {
        let params = self
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), tape.param(k, v)?)))
            .collect::<Result<_>>()?;
        Ok(Bound { params })
    }
}

/// Parameters as seen by one tape.
pub struct Bound {
    params: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| crate::Error::Usage(format!("unknown parameter {name:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_init_is_fan_in_bounded() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.init_conv("c", 8, 4, 3, &mut rng).unwrap();
        let bound = 1.0 / 6.0;
        assert!(store.get("c.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(store.get("c.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(store.count(), 8 * 4 * 9 + 8);
        assert_eq!(store.count_prefix("c.b"), 8);
    }

    #[test]
    fn duplicates_and_reshapes_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[2])).is_err());
        assert!(matches!(store.set("a", Tensor::zeros(&[3])), Err(crate::Error::Config(_))));
        assert!(matches!(store.get("b"), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn bound_parameters_receive_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full(&[3], 2.0)).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let loss = tape.sum(bound.get("w").unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), &[1.0, 1.0, 1.0]);
    }
}
