use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, GenerationResponse};
use crate::util::digest_hex;

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "HYPMIX_CACHE_DIR";

/// Record file inside the cache directory.
pub const CACHE_FILE: &str = "responses.jsonl";

/// Key of a generation: backend namespace, prompt fingerprint, model, exact
/// temperature bits and sample index.
pub fn cache_key(namespace: &str, fingerprint: &str, model_id: &str, temperature: f64, sample_index: u64) -> String {
    digest_hex(&[
        namespace.as_bytes(),
        fingerprint.as_bytes(),
        model_id.as_bytes(),
        &temperature.to_bits().to_le_bytes(),
        &sample_index.to_le_bytes(),
    ])
}

/// One line of the record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    #[serde(default)]
    pub namespace: String,
    pub fingerprint: String,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u64,
    pub response: GenerationResponse,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: u64,
}

/// Append-only response cache. Concurrent identical misses make a single
/// backend call.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, GenerationResponse>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    writer: Mutex<Option<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    /// Cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            entries: RwLock::default(),
            inflight: Mutex::default(),
            writer: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (creating if needed) the cache stored in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| io_err(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| io_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        entries.entry(entry.key).or_insert(entry.response);
                    }
                    // a torn final line from an interrupted run
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache record: {e}", path.display(), n + 1),
                }
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            dir: Some(dir),
            entries: RwLock::new(entries),
            inflight: Mutex::default(),
            writer: Mutex::new(Some(writer)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Opens the directory named by `HYPMIX_CACHE_DIR`, else `fallback`.
    pub fn open_default(fallback: impl Into<PathBuf>) -> Result<Self, BackendError> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) => Self::open(PathBuf::from(dir)),
            None => Self::open(fallback),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<GenerationResponse> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.read().expect("cache lock").len() as u64,
        }
    }

    /// Returns the cached response for the request or computes, stores and
    /// returns it. Failures are not cached.
    pub fn get_or_insert_with(
        &self,
        namespace: &str,
        request: &GenerationRequest,
        compute: impl FnOnce() -> Result<GenerationResponse, BackendError>,
    ) -> Result<GenerationResponse, BackendError> {
        let key = request.cache_key(namespace);
        if let Some(r) = self.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(r);
        }
        let slot = self
            .inflight
            .lock()
            .expect("inflight lock")
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = slot.lock().expect("inflight slot");
        if let Some(r) = self.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(r);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let result = compute();
        if let Ok(response) = &result {
            self.store(namespace, request, &key, response)?;
        }
        self.inflight.lock().expect("inflight lock").remove(&key);
        result
    }

    fn store(&self, namespace: &str, request: &GenerationRequest, key: &str, response: &GenerationResponse) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().expect("writer lock");
        if let (Some(file), Some(dir)) = (writer.as_mut(), &self.dir) {
            let entry = CacheEntry {
                key: key.to_string(),
                namespace: namespace.to_string(),
                fingerprint: request.prompt.fingerprint().to_string(),
                model_id: request.model_id.clone(),
                temperature: request.temperature,
                sample_index: request.sample_index,
                response: response.clone(),
                created_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or_default(),
            };
            let mut line = serde_json::to_string(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| io_err(&dir.join(CACHE_FILE), e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(key.to_string(), response.clone());
        Ok(())
    }

    /// Drops every entry and truncates the record file. Hit and miss
    /// counters keep counting.
    pub fn clear(&self) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().expect("writer lock");
        if let Some(dir) = &self.dir {
            let path = dir.join(CACHE_FILE);
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            drop(file);
            *writer = Some(
                OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .map_err(|e| io_err(&path, e))?,
            );
        }
        self.entries.write().expect("cache lock").clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TokenUsage;
    use crate::prompt::{FragmentKind, PromptFragment, SimulationPrompt};
    use std::sync::atomic::AtomicUsize;

    fn request(text: &str, i: u64) -> GenerationRequest {
        let p = SimulationPrompt::from_fragments(vec![PromptFragment {
            kind: FragmentKind::Global,
            text: text.into(),
            source: "t".into(),
        }]);
        GenerationRequest::new(p, "m", 0.7, i)
    }

    fn response(t: &str) -> GenerationResponse {
        GenerationResponse {
            text: t.into(),
            finish_reason: "stop".into(),
            latency_ms: 3,
            usage: TokenUsage::default(),
        }
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = cache_key("s", "f", "m", 1.0, 0);
        assert_ne!(base, cache_key("s", "g", "m", 1.0, 0));
        assert_ne!(base, cache_key("s", "f", "n", 1.0, 0));
        assert_ne!(base, cache_key("s", "f", "m", 0.9, 0));
        assert_ne!(base, cache_key("s", "f", "m", 1.0, 1));
        assert_ne!(base, cache_key("t", "f", "m", 1.0, 0));
    }

    #[test]
    fn persists_across_reopen_and_clears() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = ResponseCache::open(dir.path()).unwrap();
            c.get_or_insert_with("s", &request("a", 0), || Ok(response("x"))).unwrap();
            assert!(c.get_or_insert_with("s", &request("a", 1), || Err(BackendError::BackendUnavailable("down".into()))).is_err());
            assert_eq!(c.stats().entries, 1);
        }
        let c = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(c.stats(), CacheStats { hits: 0, misses: 0, entries: 1 });
        let r = c.get_or_insert_with("s", &request("a", 0), || panic!("must hit")).unwrap();
        assert_eq!(r, response("x"));
        c.clear().unwrap();
        assert_eq!(c.stats().entries, 0);
        assert_eq!(c.stats().hits, 1);
        drop(c);
        assert_eq!(ResponseCache::open(dir.path()).unwrap().stats().entries, 0);
    }

    #[test]
    fn torn_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = ResponseCache::open(dir.path()).unwrap();
            c.get_or_insert_with("s", &request("a", 0), || Ok(response("x"))).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(CACHE_FILE)).unwrap();
        f.write_all(b"{\"key\": \"trunc").unwrap();
        assert_eq!(ResponseCache::open(dir.path()).unwrap().stats().entries, 1);
    }

    #[test]
    fn concurrent_identical_requests_call_once() {
        let cache = ResponseCache::in_memory();
        let calls = AtomicUsize::new(0);
        let req = request("same", 0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    cache
                        .get_or_insert_with("s", &req, || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(30));
                            Ok(response("once"))
                        })
                        .unwrap()
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let s = cache.stats();
        assert_eq!((s.hits, s.misses, s.entries), (7, 1, 1));
    }
}
