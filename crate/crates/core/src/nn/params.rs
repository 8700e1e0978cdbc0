use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Whether a stored tensor is optimized or only tracked (batch-norm statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor,
}

/// Ordered, named collection of parameters and buffers.
///
/// Insertion order is stable and defines the order of gradients, optimizer
/// moments and checkpoint records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: EntryKind, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, kind, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    /// Replaces a stored value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        let slot = &mut self.entries[i].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn params(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Entry> {
        self.entries.iter_mut().filter(|e| e.kind == EntryKind::Param)
    }

    pub fn num_params(&self) -> usize {
        self.params().count()
    }

    pub fn num_scalars(&self) -> usize {
        self.params().map(|e| e.value.numel()).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Places every entry on `tape`. In [`Mode::Train`] parameters become
    /// gradient-tracking leaves; otherwise everything is a constant.
    pub fn bind<'t>(&self, tape: &'t Tape, mode: Mode) -> Bound<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| match (mode, e.kind) {
                (Mode::Train, EntryKind::Param) => tape.leaf(e.value.clone()),
                _ => tape.constant(e.value.clone()),
            })
            .collect();
        Bound {
            tape,
            mode,
            vars,
            index: self.index.clone(),
            updates: RefCell::new(Vec::new()),
        }
    }

    /// Writes buffer values collected during a training-mode forward pass.
    pub fn apply_updates(&mut self, updates: Vec<(String, Tensor)>) -> Result<()> {
        for (name, value) in updates {
            self.set(&name, value)?;
        }
        Ok(())
    }
}

/// Training mode uses batch statistics and tracks gradients; evaluation
/// mode uses running statistics and records constants only. Frozen mode
/// uses batch statistics with constant parameters (a network held fixed
/// while another one trains through it).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    Frozen,
}

/// A [`ParamStore`] placed on a tape for one forward/backward pass.
pub struct Bound<'t> {
    tape: &'t Tape,
    mode: Mode,
    vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
    updates: RefCell<Vec<(String, Tensor)>>,
}

impl<'t> Bound<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter {name}")))
    }

    pub(crate) fn record_update(&self, name: String, value: Tensor) {
        self.updates.borrow_mut().push((name, value));
    }

    /// Gradients of every entry after `backward`, in store order; buffers and
    /// parameters the loss did not reach yield `None`.
    pub fn grads(&self) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }

    pub fn into_updates(self) -> Vec<(String, Tensor)> {
        self.updates.into_inner()
    }
}
