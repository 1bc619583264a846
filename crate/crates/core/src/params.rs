//! Named, ordered parameter storage.
//!
//! Parameters are held as f64 for compute but snapped to the nearest f32
//! after initialization and after every optimizer step. Checkpoints store
//! f32 payloads, so this guarantees save -> load -> resume reproduces the
//! exact trajectory of an uninterrupted run: the in-memory values are always
//! representable in f32, making serialization lossless.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::ConfigError;
use crate::tensor::{Tape, TensorId};

/// Rounds to the nearest f32-representable value.
#[inline]
pub fn snap_f32(x: f64) -> f64 {
    x as f32 as f64
}

pub fn snap_all(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = snap_f32(*x);
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order and is part of the determinism contract (checkpoints, optimizer
/// state, and gradient collection all align by it).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter, snapping values to the f32 grid. Names must be
    /// unique.
    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        mut data: Vec<f64>,
    ) -> Result<(), ConfigError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(ConfigError(format!(
                "parameter '{name}': shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if self.index_of(name).is_some() {
            return Err(ConfigError(format!("duplicate parameter name '{name}'")));
        }
        snap_all(&mut data);
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Total scalars whose name starts with `prefix`.
    pub fn scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.data.len())
            .sum()
    }

    /// Registers every parameter on a fresh tape as a trainable leaf and
    /// returns the handles in store order.
    pub fn bind(&self, tape: &mut Tape) -> Binding<'_> {
        let ids = self
            .entries
            .iter()
            .map(|e| tape.param(&e.shape, e.data.clone()))
            .collect();
        Binding { store: self, ids }
    }

    /// Binds the store's names onto tape tensors created elsewhere (one id
    /// per entry, in store order). This lets a caller that manages its own
    /// leaves — the gradient checker, for instance — drive the model forward
    /// with probe values while keeping name-based lookups intact.
    pub fn bind_with(&self, ids: &[TensorId]) -> Binding<'_> {
        assert_eq!(
            ids.len(),
            self.entries.len(),
            "bind_with needs exactly one tensor per parameter entry"
        );
        Binding {
            store: self,
            ids: ids.to_vec(),
        }
    }
}

/// Tape handles for one forward pass, aligned with `ParamStore` order and
/// resolvable by name.
pub struct Binding<'a> {
    pub(crate) store: &'a ParamStore,
    pub(crate) ids: Vec<TensorId>,
}

impl Binding<'_> {
    pub fn id(&self, index: usize) -> TensorId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    /// Handle for a named parameter. Panics on a missing name: forward code
    /// and the initializer create names from the same config, so a miss is
    /// a construction bug, not an input error.
    pub fn get(&self, name: &str) -> TensorId {
        match self.store.index_of(name) {
            Some(i) => self.ids[i],
            None => panic!("parameter '{name}' not found in store"),
        }
    }
}
