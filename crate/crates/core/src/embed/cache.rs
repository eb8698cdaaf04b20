//! Persistent text-embedding cache.
//!
//! File format, one entry per line:
//! `sha256(kind|provider|model|text)<TAB>dim<TAB>comma-separated floats`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use super::{format_floats, parse_floats};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    /// Keys inserted since the last flush, in insertion order.
    pending: RwLock<Vec<String>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or prepares to create) a cache file. Malformed lines are
    /// skipped with a warning.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
                match parse_line(line) {
                    Some((k, v)) => {
                        entries.insert(k, v);
                    }
                    None => log::warn!("{}:{}: skipping malformed cache line", path.display(), i + 1),
                }
            }
        }
        Ok(EmbeddingCache { path: Some(path), entries: RwLock::new(entries), pending: RwLock::default() })
    }

    pub fn key(kind: &str, provider: &str, model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        for (i, part) in [kind, provider, model, text].into_iter().enumerate() {
            if i > 0 {
                h.update(b"|");
            }
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: String, vector: Vec<f64>) {
        let mut entries = self.entries.write().unwrap();
        if entries.insert(key.clone(), vector).is_none() {
            self.pending.write().unwrap().push(key);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends entries added since the last flush to the backing file.
    pub fn flush(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut pending = self.pending.write().unwrap();
        if pending.is_empty() {
            return Ok(());
        }
        let entries = self.entries.read().unwrap();
        let mut buf = String::new();
        for k in pending.iter() {
            let v = &entries[k];
            buf.push_str(&format!("{k}\t{}\t{}\n", v.len(), format_floats(v.iter().copied())));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
        pending.clear();
        Ok(())
    }
}

fn parse_line(line: &str) -> Option<(String, Vec<f64>)> {
    let mut parts = line.splitn(3, '\t');
    let key = parts.next()?;
    let dim: usize = parts.next()?.parse().ok()?;
    let values = parse_floats(parts.next()?)?;
    (values.len() == dim && key.len() == 64).then(|| (key.to_string(), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let cache = EmbeddingCache::open(&path).unwrap();
        let k1 = EmbeddingCache::key("concept", "fallback", "m", "heart failure");
        let k2 = EmbeddingCache::key("concept", "fallback", "m", "gout");
        cache.insert(k1.clone(), vec![0.1, -2.5e-300, 1.0 / 3.0]);
        cache.insert(k2.clone(), vec![f64::MIN_POSITIVE, 7.0, -0.0]);
        cache.flush().unwrap();
        cache.flush().unwrap();

        let reloaded = EmbeddingCache::open(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get(&k1), cache.get(&k1));
        assert_eq!(reloaded.get(&k2), cache.get(&k2));
        let line_count = fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(line_count, 2);
    }

    #[test]
    fn key_separates_fields() {
        let a = EmbeddingCache::key("note", "fallback", "m", "x");
        assert_ne!(a, EmbeddingCache::key("concept", "fallback", "m", "x"));
        assert_ne!(a, EmbeddingCache::key("note", "remote", "m", "x"));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn malformed_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let good = EmbeddingCache::key("a", "b", "c", "d");
        fs::write(&path, format!("garbage\n{good}\t2\t1,2\n{good}x\t1\t3\n")).unwrap();
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&good), Some(vec![1.0, 2.0]));
    }
}
