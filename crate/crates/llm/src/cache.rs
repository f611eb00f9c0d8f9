use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

/// SHA-256 over a length-prefixed, fixed-order serialization of the request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub digest: String,
}

impl CacheKey {
    pub fn compute(template_id: &str, template_version: &str, prompt: &str, model: &str, temperature: f64, max_tokens: u32) -> Self {
        let mut h = Sha256::new();
        let temperature = format!("{temperature:?}");
        let max_tokens = max_tokens.to_string();
        for field in [template_id, template_version, prompt, model, temperature.as_str(), max_tokens.as_str()] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        Self { digest: hex::encode(h.finalize()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub template_id: String,
    pub template_version: String,
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub request_summary: RequestSummary,
    pub response_text: String,
    pub model: String,
    pub created_at: String,
}

/// Response cache, optionally backed by an append-only JSONL file.
/// Later lines win on duplicate digests.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<String, CacheRecord>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new records to it.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                entries.insert(rec.digest.clone(), rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { entries: RwLock::new(entries), file: Some((path, Mutex::new(file))) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheRecord> {
        self.entries.read().expect("cache lock").get(&key.digest).cloned()
    }

    pub fn insert(&self, record: CacheRecord) -> std::io::Result<()> {
        if let Some((_, file)) = &self.file {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            let mut f = file.lock().expect("cache file lock");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.write().expect("cache lock").insert(record.digest.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_changes_with_every_field() {
        let base = CacheKey::compute("t", "v1", "p", "m", 0.0, 10);
        assert_eq!(base, CacheKey::compute("t", "v1", "p", "m", 0.0, 10));
        assert_eq!(base.digest.len(), 64);
        for other in [
            CacheKey::compute("u", "v1", "p", "m", 0.0, 10),
            CacheKey::compute("t", "v2", "p", "m", 0.0, 10),
            CacheKey::compute("t", "v1", "q", "m", 0.0, 10),
            CacheKey::compute("t", "v1", "p", "n", 0.0, 10),
            CacheKey::compute("t", "v1", "p", "m", 0.5, 10),
            CacheKey::compute("t", "v1", "p", "m", 0.0, 11),
            // Field boundaries matter.
            CacheKey::compute("tv", "1", "p", "m", 0.0, 10),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let rec = |d: &str, t: &str| CacheRecord {
            digest: d.into(),
            request_summary: RequestSummary { template_id: "lge".into(), template_version: "v1".into() },
            response_text: t.into(),
            model: "m".into(),
            created_at: "2026-01-01T00:00:00Z".into(),
        };
        {
            let c = ResponseCache::open(&path).unwrap();
            c.insert(rec("a", "first")).unwrap();
            c.insert(rec("b", "x")).unwrap();
            c.insert(rec("a", "second")).unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&CacheKey { digest: "a".into() }).unwrap().response_text, "second");
    }
}
