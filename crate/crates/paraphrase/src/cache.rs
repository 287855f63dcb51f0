//! Content-addressed JSONL store of model answers.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fgmdm_core::description::{FineGrainedDescription, PartLabel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 over the prompt version and the trimmed sentence.
pub fn cache_key(prompt_version: u32, sentence: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt_version.to_le_bytes());
    h.update(sentence.trim().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub sentence: String,
    pub raw: String,
    pub parts: BTreeMap<PartLabel, String>,
    pub degraded: bool,
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(key: String, sentence: &str, raw: String, parsed: &FineGrainedDescription) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            key,
            sentence: sentence.to_string(),
            raw,
            parts: parsed.parts.clone(),
            degraded: parsed.degraded,
            timestamp,
        }
    }

    pub fn description(&self) -> Result<FineGrainedDescription> {
        Ok(FineGrainedDescription::new(
            self.raw.clone(),
            self.parts.clone(),
            self.degraded,
        )?)
    }
}

#[derive(Debug, Default)]
pub struct ParaphraseCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
}

impl ParaphraseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing entries; a missing file is an empty cache.
    pub fn open(path: &Path) -> Result<Self> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = HashMap::new();
        match File::open(path) {
            Ok(f) => {
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(io)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let e: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Cache {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    entries.entry(e.key.clone()).or_insert(e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io(e)),
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    /// Stores and appends a new entry. Existing keys are never overwritten;
    /// returns whether the entry was new.
    pub fn insert(&mut self, entry: CacheEntry) -> Result<bool> {
        if self.entries.contains_key(&entry.key) {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let io = |source| Error::Io {
                path: path.clone(),
                source,
            };
            let line = serde_json::to_string(&entry).map_err(|e| Error::Parse(e.to_string()))?;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            writeln!(f, "{line}").map_err(io)?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_version_and_sentence() {
        let k = cache_key(1, "A person nods.");
        assert_eq!(k.len(), 64);
        assert_eq!(k, cache_key(1, " A person nods. "));
        assert_ne!(k, cache_key(2, "A person nods."));
        assert_ne!(k, cache_key(1, "A person bows."));
    }
}
