//! Flat `key = value` files merged with command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctct::config::KvMap;

use crate::error::CliError;

/// Parses `KEY=VALUE` for `--set`.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err("empty key".into());
    }
    Ok((k.to_owned(), v.trim().to_owned()))
}

/// Merged settings: flag > file > default.
pub struct Settings {
    pub kv: KvMap,
}

impl Settings {
    /// Reads `file` (if any), resolving the values of `path_keys` against the file's
    /// directory, then applies `overrides` in order.
    pub fn load(file: Option<&Path>, path_keys: &[&str], overrides: Vec<(String, String)>) -> Result<Self, CliError> {
        let mut kv = KvMap::default();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::data(format!("cannot read config {}: {e}", file.display())))?;
            let parsed = KvMap::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", file.display())))?;
            let base = file.parent().unwrap_or(Path::new(""));
            for (k, v) in parsed.remaining() {
                if path_keys.contains(&k.as_str()) {
                    kv.set(&k, base.join(&v).to_string_lossy().into_owned());
                } else {
                    kv.set(&k, v);
                }
            }
        }
        for (k, v) in overrides {
            kv.set(&k, v);
        }
        Ok(Self { kv })
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.kv.get(key)?)
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.kv.get_or(key, default)?)
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.kv.require(key)?)
    }

    /// Path that must already exist.
    pub fn existing_path(&mut self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.get::<PathBuf>(key)? {
            Some(p) if !p.exists() => Err(CliError::data(format!("`{key}`: {} does not exist", p.display()))),
            other => Ok(other),
        }
    }

    /// Fails on any key nobody read.
    pub fn finish(&self) -> Result<(), CliError> {
        Ok(self.kv.finish()?)
    }
}

/// Collects `Some` flag values as overrides after the generic `--set` pairs.
pub fn overrides(set: &[(String, String)], flags: &[(&str, Option<String>)]) -> Vec<(String, String)> {
    let mut out = set.to_vec();
    for (k, v) in flags {
        if let Some(v) = v {
            out.push(((*k).to_owned(), v.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.cfg");
        std::fs::write(&file, "epochs = 4\nbatch_size = 8\nmanifest = data/manifest.tsv\n").unwrap();
        let ov = overrides(&[], &[("epochs", Some("9".into())), ("seed", None)]);
        let mut s = Settings::load(Some(&file), &["manifest"], ov).unwrap();
        assert_eq!(s.get_or("epochs", 1usize).unwrap(), 9);
        assert_eq!(s.get_or("batch_size", 32usize).unwrap(), 8);
        assert_eq!(s.get_or("checkpoint_every", 1usize).unwrap(), 1);
        assert_eq!(s.require::<PathBuf>("manifest").unwrap(), dir.path().join("data/manifest.tsv"));
        s.finish().unwrap();
    }

    #[test]
    fn unread_keys_are_usage_errors() {
        let mut s = Settings::load(None, &[], vec![("epoch".into(), "3".into())]).unwrap();
        assert_eq!(s.get::<usize>("epochs").unwrap(), None);
        assert_eq!(s.finish().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn override_syntax() {
        assert_eq!(parse_override(" a = b ").unwrap(), ("a".into(), "b".into()));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("=x").is_err());
    }
}
