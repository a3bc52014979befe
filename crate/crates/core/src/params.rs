//! Named parameter storage and tape binding.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Role of a parameter tensor; drives initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Square state-to-state matrix, initialized orthogonal.
    Recurrent,
    Bias,
    /// Everything else, initialized Gaussian.
    Weight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Param(format!("duplicate parameter name {name}")));
        }
        if kind == ParamKind::Recurrent {
            match tensor.shape() {
                [r, c] if r == c => {}
                other => {
                    return Err(Error::Param(format!(
                        "recurrent parameter {name} must be square, got {other:?}"
                    )))
                }
            }
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param { name, kind, tensor });
        Ok(())
    }

    /// Declares a zero-filled tensor.
    pub fn declare(&mut self, name: impl Into<String>, kind: ParamKind, shape: Vec<usize>) -> Result<()> {
        self.insert(name, kind, Tensor::zeros(shape)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.entries[i].tensor)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|p| &p.tensor)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every tensor as a borrowed leaf on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> Bound<'a> {
        let vars = self.entries.iter().map(|p| tape.leaf_with(&p.tensor, requires_grad)).collect();
        Bound { store: self, vars }
    }
}

/// Tape handles for every entry of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound<'s> {
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl<'s> Bound<'s> {
    /// Wraps externally created handles, one per store entry in order.
    pub fn from_vars(store: &'s ParamStore, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::Param(format!(
                "expected {} handles, got {}",
                store.len(),
                vars.len()
            )));
        }
        Ok(Self { store, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }
}
