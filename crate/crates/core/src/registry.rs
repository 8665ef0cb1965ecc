//! A small name-keyed registry for pluggable strategy objects.
//!
//! Judging strategies, prediction strategies, and chat backends all hang
//! off one of these, so a run can pick implementations by name from config
//! or CLI flags without the call sites knowing concrete types.

use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{kind} {name:?} is already registered")]
    Duplicate { kind: &'static str, name: String },
    #[error("no {kind} named {name:?} (available: {available:?})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },
}

/// A registry of trait objects keyed by name. Iteration order is sorted,
/// so anything derived from a registry is deterministic.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    /// Creates an empty registry. `kind` names what it holds ("backend",
    /// "judging strategy", …) and only appears in error messages.
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers an entry under a unique name.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        entry: Arc<T>,
    ) -> Result<(), RegistryError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(RegistryError::Duplicate {
                kind: self.kind,
                name,
            });
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<T>> {
        self.entries.get(name).cloned()
    }

    /// Like [`Registry::get`] but produces an error that lists what is
    /// available.
    pub fn expect(&self, name: &str) -> Result<Arc<T>, RegistryError> {
        self.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Registered names, sorted.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
