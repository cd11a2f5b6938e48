//! Disk cache for completions: one JSON file per request hash holding the
//! request and its response. Safe under concurrent readers and writers via
//! write-to-temp + atomic rename. Credentials are never written here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Decoding, JudgeError};

/// Content hash identifying one completion request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey(String);

impl CacheKey {
    /// Derives the key from everything that determines the response:
    /// model, decoding parameters, prompt, and the re-query ordinal
    /// (`attempt` is 1 for the first query, 2 for the single re-query issued
    /// after an unparseable response).
    pub fn derive(model_id: &str, decoding: &Decoding, prompt: &str, attempt: u32) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(model_id.as_bytes());
        hasher.update([0]);
        hasher.update(format!(
            "t={};m={};s={};a={attempt}",
            decoding.temperature,
            decoding.max_tokens,
            decoding.seed.map_or("none".to_string(), |s| s.to_string()),
        ));
        hasher.update([0]);
        hasher.update(prompt.as_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model_id: String,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
    attempt: u32,
    prompt: String,
    response: String,
}

/// Directory of cached completions.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, JudgeError> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }

    /// Cached response for `key`, or `None` on a miss. A file that exists
    /// but does not decode is a corruption error, not a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<String>, JudgeError> {
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| JudgeError::CacheCorrupt {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Some(entry.response))
    }

    pub fn put(
        &self,
        key: &CacheKey,
        model_id: &str,
        decoding: &Decoding,
        attempt: u32,
        prompt: &str,
        response: &str,
    ) -> Result<(), JudgeError> {
        let entry = CacheEntry {
            model_id: model_id.to_string(),
            temperature: decoding.temperature,
            max_tokens: decoding.max_tokens,
            seed: decoding.seed,
            attempt,
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(".{}.tmp-{}", key.as_str(), std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec(&entry).expect("cache entry serializes"))?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoding() -> Decoding {
        Decoding { temperature: 0.0, max_tokens: 256, seed: Some(7) }
    }

    #[test]
    fn key_depends_on_every_request_field() {
        let base = CacheKey::derive("m", &decoding(), "p", 1);
        assert_eq!(base, CacheKey::derive("m", &decoding(), "p", 1));
        assert_ne!(base, CacheKey::derive("m2", &decoding(), "p", 1));
        assert_ne!(base, CacheKey::derive("m", &decoding(), "p2", 1));
        assert_ne!(base, CacheKey::derive("m", &decoding(), "p", 2));
        let warmer = Decoding { temperature: 0.7, ..decoding() };
        assert_ne!(base, CacheKey::derive("m", &warmer, "p", 1));
    }

    #[test]
    fn round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::derive("m", &decoding(), "prompt", 1);
        assert_eq!(cache.get(&key).unwrap(), None);
        cache.put(&key, "m", &decoding(), 1, "prompt", "hello").unwrap();
        assert_eq!(cache.get(&key).unwrap(), Some("hello".to_string()));
    }

    #[test]
    fn corrupt_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::derive("m", &decoding(), "prompt", 1);
        std::fs::write(dir.path().join(format!("{}.json", key.as_str())), b"garbage").unwrap();
        assert!(matches!(cache.get(&key), Err(JudgeError::CacheCorrupt { .. })));
    }
}
