//! Name-keyed strategy registries.
//!
//! Each pluggable stage (extractors, smoothers, Shapley estimators, scenario
//! families) exposes a [`Registry`] of builders. A builder turns the stage's
//! config into a boxed trait object, so new variants only need a
//! `register` call.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} {name:?}; known: {known}")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("invalid {kind} config: {message}")]
    Config { kind: &'static str, message: String },
}

type Builder<T, C> = Box<dyn Fn(&C) -> Result<Box<T>, RegistryError> + Send + Sync>;

pub struct Registry<T: ?Sized, C> {
    kind: &'static str,
    builders: BTreeMap<String, Builder<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            builders: BTreeMap::new(),
        }
    }

    /// Adds or replaces the builder for `name`.
    pub fn register<F>(&mut self, name: &str, builder: F) -> &mut Self
    where
        F: Fn(&C) -> Result<Box<T>, RegistryError> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Box::new(builder));
        self
    }

    pub fn build(&self, name: &str, config: &C) -> Result<Box<T>, RegistryError> {
        match self.builders.get(name) {
            Some(b) => b(config),
            None => Err(RegistryError::Unknown {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<T: ?Sized, C> fmt::Debug for Registry<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
