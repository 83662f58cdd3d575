//! Plain-text `key = value` configuration.
//!
//! One entry per line; `#` starts a comment; later entries override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, TnpError};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_assignment(line)
                .map_err(|_| TnpError::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TnpError::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| TnpError::Config(format!("expected key=value, got '{assignment}'")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(TnpError::Config(format!("empty key in '{assignment}'")));
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| TnpError::Config(format!("bad value for {key}: '{v}'"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| TnpError::Config(format!("missing key {key}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let p = format!("{prefix}.");
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Sorted `key=value` lines; the canonical text form.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_overrides() {
        let cfg = KvConfig::parse("# run\nsteps = 10\nlr=0.1 # max\n\nsteps=20\n").unwrap();
        assert_eq!(cfg.require::<usize>("steps").unwrap(), 20);
        assert_eq!(cfg.get::<f64>("lr").unwrap(), Some(0.1));
        assert!(cfg.require::<usize>("missing").is_err());
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(cfg.get::<usize>("lr").is_err());
    }

    #[test]
    fn canonical_text_is_sorted() {
        let a = KvConfig::parse("b=2\na=1\n").unwrap();
        let b = KvConfig::parse("a=1\nb=2\n").unwrap();
        assert_eq!(a.to_text(), "a=1\nb=2\n");
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(KvConfig::parse(&a.to_text()).unwrap(), a);
    }
}
