//! `key = value` configuration files.
//!
//! Keys are the long flag names (`k`, `lambda`, `temperature`, ...). A flag
//! given on the command line always wins over the file.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

use crate::InputError;

#[derive(Debug, Default, Clone)]
pub struct Config {
    table: toml::Table,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| InputError(format!("invalid config: {e}")))?;
        Ok(Self { table })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| InputError(format!("config key {key}: {e}")).into()),
        }
    }

    /// Fills `slot` from the file when the flag was not given.
    pub fn fill<T: DeserializeOwned>(&self, slot: &mut Option<T>, key: &str) -> Result<()> {
        if slot.is_none() {
            *slot = self.get(key)?;
        }
        Ok(())
    }

    /// Like [`Config::fill`] for repeatable flags. A single value is read
    /// as a one-element list.
    pub fn fill_list<T: DeserializeOwned>(&self, slot: &mut Vec<T>, key: &str) -> Result<()> {
        if slot.is_empty() {
            match self.table.get(key) {
                Some(toml::Value::Array(_)) | None => {
                    if let Some(v) = self.get::<Vec<T>>(key)? {
                        *slot = v;
                    }
                }
                Some(_) => slot.extend(self.get::<T>(key)?),
            }
        }
        Ok(())
    }
}
