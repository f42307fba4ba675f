use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::ops::{self, BnConfig, Mode, RunningStats};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Named parameter tensors plus non-trainable buffers (batch-norm running
/// statistics). Names are dotted module paths, e.g.
/// `unmixing.encoder.block1.conv.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    tensor: Tensor<T>,
    trainable: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(name.into(), Entry { tensor, trainable: true });
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(name.into(), Entry { tensor, trainable: false });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Incompatible(format!("missing parameter `{name}`")))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// All entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable scalars under a name prefix.
    pub fn parameter_count_under(&self, prefix: &str) -> usize {
        self.trainable()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            tensor: e.tensor.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Parameters are copied onto the tape the first time they are used. With
/// `track = true` they become tracked leaves; otherwise constants, so an
/// evaluation pass allocates no gradients.
pub struct Session<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s mut ParamStore<T>,
    bound: BTreeMap<String, Var>,
    track: bool,
    bn: BnConfig,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, track: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            track,
            bn: BnConfig::default(),
        }
    }

    pub fn with_bn_config(mut self, bn: BnConfig) -> Self {
        self.bn = bn;
        self
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.require(name)?.clone();
        let v = if self.track && self.store.is_trainable(name) {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_owned(), v);
        Ok(v)
    }

    /// Batch norm whose parameters live under `prefix` (`gamma`, `beta`,
    /// `running_mean`, `running_var`). Train mode writes the updated running
    /// statistics back into the store.
    pub fn batch_norm(&mut self, prefix: &str, x: Var, mode: Mode) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let mut stats = RunningStats {
            mean: self.store.require(&mean_name)?.data().to_vec(),
            var: self.store.require(&var_name)?.data().to_vec(),
        };
        let y = ops::batch_norm(&mut self.tape, x, gamma, beta, &mut stats, mode, self.bn)?;
        if mode == Mode::Train {
            self.store
                .get_mut(&mean_name)
                .expect("checked above")
                .data_mut()
                .copy_from_slice(&stats.mean);
            self.store
                .get_mut(&var_name)
                .expect("checked above")
                .data_mut()
                .copy_from_slice(&stats.var);
        }
        Ok(y)
    }

    /// Gradients of every bound trainable parameter, in name order.
    pub fn gradients(&self) -> Vec<(String, Tensor<T>)> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.tape.grad(v).map(|g| (name.clone(), g)))
            .collect()
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }
}
