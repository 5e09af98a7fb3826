//! Name-keyed registries of interchangeable strategies.
//!
//! Each strategy family (interleavers, packet samplers, Pareto shape
//! estimators, head-solver tail corrections) is a trait object registered
//! under a stable name, so the CLI and configuration files can select an
//! implementation at runtime.

use crate::error::{Error, Result};

/// Anything that can be stored in a [`Registry`].
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: Vec<Box<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers a strategy, replacing any previous entry with the same name.
    pub fn register(&mut self, entry: Box<T>) -> &mut Self {
        let name = entry.name();
        self.entries.retain(|e| e.name() != name);
        self.entries.push(entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
