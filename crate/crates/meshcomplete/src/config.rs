//! Run configuration: a flat key-value file format with sections, strict
//! key validation, deterministic snapshots, and seeded random substreams.
//!
//! Format: `[section]` headers, `key = value` lines, `#` comments. Flags
//! override file values; every run writes the resolved configuration back
//! out so any result can be reproduced from its snapshot alone.

use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error (line {line}): {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("bad value for [{section}] {key}: {value:?} ({expected})")]
    BadValue {
        section: String,
        key: String,
        value: String,
        expected: String,
    },
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

/// All randomness flows from one root seed through named substreams, so
/// independent pipeline stages can be re-run in isolation.
pub fn substream(root_seed: u64, name: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    <ChaCha12Rng as rand::SeedableRng>::from_seed(seed)
}

/// Sectioned key-value configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<KvConfig, ConfigError> {
        let mut config = KvConfig::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: lineno,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                message: format!("expected key = value, got {line:?}"),
            })?;
            config.set(&section, key.trim(), value.trim());
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<KvConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    /// Rejects any key not present in the schema, catching typos early.
    pub fn validate_known(&self, schema: &[(&str, &[&str])]) -> Result<(), ConfigError> {
        for (section, keys) in &self.sections {
            let allowed = schema
                .iter()
                .find(|(name, _)| name == section)
                .map(|(_, keys)| *keys)
                .ok_or_else(|| ConfigError::UnknownKey {
                    section: section.clone(),
                    key: String::new(),
                })?;
            for key in keys.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey {
                        section: section.clone(),
                        key: key.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get_parsed<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| ConfigError::BadValue {
                section: section.to_string(),
                key: key.to_string(),
                value: raw.to_string(),
                expected: std::any::type_name::<T>().to_string(),
            }),
        }
    }

    /// Deterministic snapshot: sections and keys in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, keys) in &self.sections {
            if !section.is_empty() {
                let _ = writeln!(out, "[{section}]");
            }
            for (key, value) in keys {
                let _ = writeln!(out, "{key} = {value}");
            }
            let _ = writeln!(out);
        }
        out
    }
}
