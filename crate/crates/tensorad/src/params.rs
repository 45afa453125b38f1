use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Named parameters in insertion order. Order is part of the on-disk format,
/// so iteration is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f64>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f64>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f64>> {
        self.get(name)
            .ok_or_else(|| TensorError::Invalid(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Subset whose names start with `prefix`, in original order.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    /// Copies every entry of `other` into `self`.
    pub fn extend_from(&mut self, other: &ParamSet) {
        for (n, t) in other.iter() {
            self.insert(n, t.clone());
        }
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let mut vars = HashMap::with_capacity(self.len());
        let mut order = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            let value = t.cast::<T>();
            let v = if trainable {
                g.param(value)
            } else {
                g.constant(value)
            };
            vars.insert(name.to_string(), v);
            order.push(name.to_string());
        }
        Bound { vars, order }
    }
}

/// Parameters recorded on a graph, looked up by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<String>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::Invalid(format!("parameter `{name}` is not bound")))
    }

    /// Gradient of `loss` for every bound parameter; parameters that do not
    /// influence the loss get zeros.
    pub fn gradients(&self, g: &mut Graph<f64>, loss: Var) -> Result<ParamSet> {
        let wrt: Vec<Var> = self.order.iter().map(|n| self.vars[n]).collect();
        let grads = g.grad(loss, &wrt)?;
        let mut out = ParamSet::new();
        for ((name, v), gv) in self.order.iter().zip(&wrt).zip(grads) {
            let t = match gv {
                Some(gv) => g.value(gv).clone(),
                None => Tensor::zeros(g.shape(*v)),
            };
            out.insert(name.clone(), t);
        }
        Ok(out)
    }
}
