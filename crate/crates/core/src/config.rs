//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique. Every key
//! must be consumed by the reader; leftovers are reported as unknown.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown configuration key(s): {0}")]
    UnknownKeys(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Parsed key/value pairs with consumption tracking.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
    consumed: std::collections::BTreeSet<String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.insert(key.to_owned(), v.trim().to_owned()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: key.to_owned(),
                });
            }
        }
        Ok(Self {
            entries,
            consumed: Default::default(),
        })
    }

    /// Inserts or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_owned(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&mut self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.consumed.insert(key.to_owned());
        Some(v.as_str())
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::Invalid {
                key: key.to_owned(),
                value: v.to_owned(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_owned()))
    }

    /// A `min, max` pair; a single value means a degenerate range.
    pub fn range(&mut self, key: &str, default: (f64, f64)) -> Result<(f64, f64), ConfigError> {
        let Some(v) = self.raw(key) else {
            return Ok(default);
        };
        let invalid = |reason: &str| ConfigError::Invalid {
            key: key.to_owned(),
            value: v.to_owned(),
            reason: reason.to_owned(),
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| invalid("not a number")))
            .collect::<Result<_, _>>()?;
        match nums.as_slice() {
            [x] => Ok((*x, *x)),
            [lo, hi] => Ok((*lo, *hi)),
            _ => Err(invalid("expected `min, max`")),
        }
    }

    /// Entries not read so far, in key order.
    pub fn remaining(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .filter(|(k, _)| !self.consumed.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Errors if any key was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::UnknownKeys(unknown.join(", ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_keys() {
        let mut kv = KvMap::parse("# comment\n a = 1 \n\nb=x y\nr = -5, 5\n").unwrap();
        assert_eq!(kv.get::<i32>("a").unwrap(), Some(1));
        assert_eq!(kv.raw("b"), Some("x y"));
        assert!(matches!(kv.finish(), Err(ConfigError::UnknownKeys(k)) if k == "r"));
        assert_eq!(kv.range("r", (0.0, 0.0)).unwrap(), (-5.0, 5.0));
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_syntax_and_duplicates() {
        assert_eq!(KvMap::parse("novalue").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(KvMap::parse("a=1\na=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let mut kv = KvMap::parse("a = q").unwrap();
        assert!(matches!(kv.get::<f64>("a"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(kv.require::<f64>("zz"), Err(ConfigError::Missing(_))));
    }
}
