//! Reverse-mode autodiff on a flat tape.
//!
//! A [`Graph`] owns the forward values; every op records a backward closure
//! that turns the node's output gradient into gradients for its parents.
//! Ops append nodes in topological order, so the backward pass is a single
//! reverse sweep. Leaf gradients survive the sweep; interior gradients are
//! consumed as they propagate.

pub mod kernels;
mod ops;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use kernels::Pad;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Insert a leaf value (input or parameter snapshot).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<T>>,
    ) -> Var {
        for p in &parents {
            assert!(p.0 < self.nodes.len(), "parent var out of range");
        }
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root. Returns gradients for leaves (and
    /// any node whose gradient was never consumed by a parent-ward step).
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward root must be scalar, got {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(back) = node.backward.as_ref() else {
                continue; // leaf keeps its accumulated gradient
            };
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let pvals: Vec<&Tensor<T>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let pgrads = back(&gout, &pvals, &node.value);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(pgrads) {
                if let Some(g) = g {
                    debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Identifier of a named parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in the store's registration order; also the index into the
    /// gradient vector produced by [`ParamVars::collect`].
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Owns every trainable tensor, keyed by a unique hierarchical name.
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Register a tensor under a unique name. Panics on duplicates: parameter
    /// naming is static program structure, not runtime input.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

/// Per-parameter leaf bindings for one graph build.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    /// Insert every parameter as a leaf of `graph` (values are snapshots).
    pub fn bind<T: Scalar>(graph: &mut Graph<T>, store: &ParamStore<T>) -> ParamVars {
        let vars = store
            .tensors
            .iter()
            .map(|t| graph.input(t.clone()))
            .collect();
        ParamVars { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collect parameter gradients by id; parameters the loss never touched
    /// get `None`.
    pub fn collect<T: Scalar>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| grads.take(*v)).collect()
    }
}
