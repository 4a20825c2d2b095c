//! Named parameter storage and the per-forward binding of parameters to
//! tape leaves.
//!
//! A [`ParamStore`] owns the model's weights between steps. Each forward
//! pass opens a fresh [`Session`], which lazily materializes every
//! parameter it touches as a gradient-tracked leaf on a new tape. After
//! `backward`, gradients are read back per parameter and the session is
//! dropped; the optimizer then mutates the store directly.

use std::collections::HashMap;

use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::TensorData;
use crate::CoreError;

/// Stable handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Insertion-ordered collection of named weight tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<TensorData<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    /// Register a tensor under a unique name and hand back its id.
    pub fn add(&mut self, name: impl Into<String>, value: TensorData<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id.0);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &TensorData<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut TensorData<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Total number of scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(TensorData::numel).sum()
    }

    /// Same names and shapes with every value converted through f64.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for id in self.ids() {
            out.add(self.name(id).to_string(), self.value(id).cast());
        }
        out
    }
}

/// One forward/backward pass over a store: a tape plus the memoized
/// mapping from parameter ids to leaf nodes, so a parameter used twice
/// still contributes a single leaf whose gradient accumulates.
pub struct Session<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    pub tape: Tape<T>,
    bound: Vec<Option<NodeId>>,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, tape: Tape::new(), bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Leaf node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.bound[id.index()] {
            return node;
        }
        let node = self.tape.leaf(self.store.value(id).clone(), true);
        self.bound[id.index()] = Some(node);
        node
    }

    /// Leaf for non-parameter data (inputs, targets).
    pub fn constant(&mut self, value: TensorData<T>) -> NodeId {
        self.tape.constant(value)
    }

    pub fn backward(&mut self, loss: NodeId) -> Result<(), CoreError> {
        self.tape.backward(loss)
    }

    /// Gradient of the last `backward` with respect to one parameter.
    /// `None` when the parameter never joined the graph or got no signal.
    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        let node = self.bound[id.index()]?;
        self.tape.grad(node)
    }
}
