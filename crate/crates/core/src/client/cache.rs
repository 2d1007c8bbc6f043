//! Content-keyed on-disk response cache.
//!
//! One JSON file per key under the cache directory, named by the hex
//! digest. Writes go through a temp file and an atomic rename while holding a
//! process-wide lock, so a completed write is visible to every later read.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use crate::error::Result;

/// Position of one request: which stream of samples it belongs to, its cell
/// in the `K×K` grid, and which stochastic decode of that cell it is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReplicateIndex {
    pub stream: String,
    pub grid: (u32, u32),
    pub decode: u32,
}

impl ReplicateIndex {
    pub fn new(stream: impl Into<String>, grid: (u32, u32), decode: u32) -> Self {
        ReplicateIndex { stream: stream.into(), grid, decode }
    }

    /// Compact wire form `stream:i,j:decode`, sent to servers as a header.
    pub fn tag(&self) -> String {
        format!("{}:{},{}:{}", self.stream, self.grid.0, self.grid.1, self.decode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// 256-bit cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    rendered_prompt: &'a str,
    media_hash: &'a str,
    temperature: f64,
    max_tokens: u32,
    replicate: &'a ReplicateIndex,
}

/// SHA-256 of the canonical JSON serialization of every argument.
pub fn cache_key(
    model_id: &str,
    rendered_prompt: &str,
    media_hash: &str,
    decode: DecodeParams,
    replicate: &ReplicateIndex,
) -> CacheKey {
    let material = KeyMaterial {
        model_id,
        rendered_prompt,
        media_hash,
        temperature: decode.temperature,
        max_tokens: decode.max_tokens,
        replicate,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    CacheKey(Sha256::digest(&bytes).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub raw_text: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: serde_json::Value,
    pub response: CachedResponse,
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.hex()))
    }

    /// Unreadable or corrupt entries count as misses.
    pub async fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        let bytes = tokio::fs::read(self.path_for(key)).await.ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub async fn put(&self, key: &CacheKey, request: serde_json::Value, response: CachedResponse) -> Result<()> {
        let entry = CacheEntry {
            request,
            response,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let bytes = serde_json::to_vec_pretty(&entry)?;
        let _guard = self.write_lock.lock().await;
        let final_path = self.path_for(key);
        let tmp = self.dir.join(format!(".{}.tmp", key.hex()));
        tokio::fs::write(&tmp, &bytes).await?;
        tokio::fs::rename(&tmp, &final_path).await?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(temp: f64, decode: u32) -> CacheKey {
        cache_key(
            "m",
            "prompt",
            "abc",
            DecodeParams { temperature: temp, max_tokens: 8 },
            &ReplicateIndex::new("fes", (0, 1), decode),
        )
    }

    #[test]
    fn key_is_deterministic_and_field_sensitive() {
        assert_eq!(key(0.7, 0), key(0.7, 0));
        assert_ne!(key(0.7, 0), key(0.7, 1));
        assert_ne!(key(0.0, 0), key(0.7, 0));
        let other_stream = cache_key(
            "m",
            "prompt",
            "abc",
            DecodeParams { temperature: 0.7, max_tokens: 8 },
            &ReplicateIndex::new("fcs", (0, 1), 0),
        );
        assert_ne!(other_stream, key(0.7, 0));
        let other_media = cache_key(
            "m",
            "prompt",
            "abd",
            DecodeParams { temperature: 0.7, max_tokens: 8 },
            &ReplicateIndex::new("fes", (0, 1), 0),
        );
        assert_ne!(other_media, key(0.7, 0));
    }

    #[tokio::test]
    async fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let k = key(0.7, 0);
        assert!(cache.get(&k).await.is_none());
        let resp = CachedResponse { raw_text: "B".into(), latency_ms: 3 };
        cache.put(&k, serde_json::json!({"x": 1}), resp.clone()).await.unwrap();
        assert_eq!(cache.get(&k).await.unwrap().response, resp);
        assert!(cache.path_for(&k).file_name().unwrap().to_str().unwrap().starts_with(&k.hex()));
    }
}
