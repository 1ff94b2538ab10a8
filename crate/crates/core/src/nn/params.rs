use ultrabm_tensor::{Gradients, Graph, Real, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, insertion-ordered list of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    /// Replaces every value, checking names and shapes against `self`.
    pub fn load_values(&mut self, named: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in named {
            let id = self.find(&name).ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if t.shape() != self.values[id.0].shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = t;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("parameter `{}` missing", self.names[i])));
        }
        Ok(())
    }
}

/// One forward pass: a fresh graph plus lazily materialized parameter leaves.
pub struct Ctx<'a, T: Real> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Real> Ctx<'a, T> {
    /// With `trainable` false parameters enter the graph as constants and no
    /// gradients are tracked for them.
    pub fn new(store: &'a ParamStore<T>, trainable: bool) -> Self {
        Self { g: Graph::new(), store, vars: vec![None; store.len()], trainable }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable { self.g.param(t) } else { self.g.constant(t) };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Gradient per parameter, zeros for parameters the loss did not touch.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.store
            .ids()
            .map(|id| {
                self.vars[id.0]
                    .and_then(|v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(self.store.get(id).shape().to_vec()))
            })
            .collect()
    }
}
