use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::autograd::{Gradients, Graph, Tensor, Var};

/// Ordered set of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(Arc::new(value));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &*self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| &**t))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Registers every tensor on `g`, as trainable leaves or as constants.
    pub fn bind<'g>(&'g self, g: &'g Graph, trainable: bool) -> BoundParams<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(Arc::clone(t))
                } else {
                    g.constant(Arc::clone(t))
                }
            })
            .collect();
        BoundParams { set: self, vars }
    }
}

/// Parameters registered on one graph.
pub struct BoundParams<'g> {
    set: &'g ParamSet,
    vars: Vec<Var<'g>>,
}

impl<'g> BoundParams<'g> {
    pub fn var(&self, name: &str) -> Var<'g> {
        let i = self
            .set
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// Gradient per parameter, zero where none flowed.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }
}
