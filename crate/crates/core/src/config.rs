//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs, consumed key by key so leftovers can be reported.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    /// Inserts or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key` into `slot` if present.
    pub fn take<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(raw) = self.entries.remove(key) {
            *slot = raw
                .parse()
                .map_err(|e| Error::Config(format!("invalid value {raw:?} for key {key}: {e}")))?;
        }
        Ok(())
    }

    pub fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(_) => {
                let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
                Err(Error::Config(format!("unknown key(s): {}", keys.join(", "))))
            }
        }
    }
}

/// Boolean values accept `true/false`, `1/0`, `yes/no`, `on/off`.
pub fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// A bool that parses with [`parse_bool`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        parse_bool(s).map(Flag).ok_or_else(|| "expected true or false".to_string())
    }
}
