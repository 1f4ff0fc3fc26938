use std::collections::BTreeMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{KrfError, Result};

/// Named registry of trainable tensors, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor; every name may appear only once.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(KrfError::Config(format!("parameter `{name}` registered twice")));
        }
        tensor.set_requires_grad(true);
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| KrfError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(KrfError::UnknownParam(name.to_string())),
        }
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

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Pushes every tensor onto `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, true)
    }

    /// Pushes every tensor as a constant; used for inference.
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let mut leaf = t.clone();
                leaf.zero_grad();
                let v = if trainable { tape.param(leaf) } else { tape.constant(leaf) };
                (name.clone(), v)
            })
            .collect::<Vec<_>>();
        ParamVars::new(vars)
    }

    /// Copies tape gradients into each tensor's `grad`; untouched tensors get zeros.
    pub fn absorb_grads(&mut self, vars: &ParamVars, grads: &mut Gradients) -> Result<()> {
        for (name, tensor) in self.entries.iter_mut() {
            let var = vars.get(name)?;
            let g = grads.take(var).unwrap_or_else(|| vec![0.0; tensor.len()]);
            tensor.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    /// Euclidean norm over every stored gradient.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for (_, t) in self.entries.iter_mut() {
                if let Some(mut g) = t.take_grad() {
                    g.iter_mut().for_each(|v| *v *= factor);
                    t.set_grad(g).expect("same length");
                }
            }
        }
        norm
    }
}

/// Tape handles for a [`ParamStore`], looked up by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<(String, Var)>,
    index: BTreeMap<String, usize>,
}

impl ParamVars {
    fn new(vars: Vec<(String, Var)>) -> Self {
        let index = vars.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        ParamVars { vars, index }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].1)
            .ok_or_else(|| KrfError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
