//! Content-addressed record/replay cache: one request plus response per
//! file, pretty-printed so fixtures stay diff-able and committable.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{cache_key, ChatMessage, ChatProvider, Completion, GatewayError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub response: String,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.entry_path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Atomic write (temp file then rename) so concurrent readers never
    /// observe partial entries.
    pub fn store(&self, key: &str, entry: &CacheEntry) -> std::io::Result<()> {
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let body = serde_json::to_string_pretty(entry).expect("cache entry serializes");
        fs::write(&tmp, body)?;
        fs::rename(&tmp, self.entry_path(key))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| {
                        e.path().extension().and_then(|x| x.to_str()) == Some("json")
                    })
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Serve hits from the cache, forward misses to the inner provider
    /// and record its responses.
    Record,
    /// Serve hits only; a miss is an error.
    ReplayOnly,
}

/// Cache layer over any provider. In `ReplayOnly` mode no inner provider
/// is needed and the whole pipeline becomes a deterministic function of
/// (question, database, recorded cache).
pub struct CachingProvider {
    cache: ReplayCache,
    inner: Option<Box<dyn ChatProvider>>,
    mode: CacheMode,
    key_provider: String,
    key_model: String,
    write_lock: Mutex<()>,
}

impl CachingProvider {
    pub fn recording(cache: ReplayCache, inner: Box<dyn ChatProvider>) -> Self {
        let key_provider = inner.provider_id().to_string();
        let key_model = inner.model_id().to_string();
        Self {
            cache,
            inner: Some(inner),
            mode: CacheMode::Record,
            key_provider,
            key_model,
            write_lock: Mutex::new(()),
        }
    }

    /// Replay-only provider keyed as `provider_id`/`model_id`; these must
    /// match the identities used during recording.
    pub fn replay_only(
        cache: ReplayCache,
        provider_id: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Self {
        Self {
            cache,
            inner: None,
            mode: CacheMode::ReplayOnly,
            key_provider: provider_id.into(),
            key_model: model_id.into(),
            write_lock: Mutex::new(()),
        }
    }
}

impl ChatProvider for CachingProvider {
    fn provider_id(&self) -> &str {
        &self.key_provider
    }

    fn model_id(&self) -> &str {
        &self.key_model
    }

    fn complete_raw(
        &self,
        messages: &[ChatMessage],
        temperature: f64,
        stop_markers: &[String],
    ) -> Result<Completion, GatewayError> {
        let key = cache_key(&self.key_provider, &self.key_model, messages, temperature);
        if let Some(entry) = self.cache.load(&key) {
            return Ok(Completion {
                text: entry.response,
                output_tokens: entry.output_tokens,
            });
        }
        match (self.mode, &self.inner) {
            (CacheMode::ReplayOnly, _) | (_, None) => {
                Err(GatewayError::CacheMiss(key))
            }
            (CacheMode::Record, Some(inner)) => {
                let completion = inner.complete_raw(messages, temperature, stop_markers)?;
                let entry = CacheEntry {
                    provider: self.key_provider.clone(),
                    model: self.key_model.clone(),
                    temperature,
                    messages: messages.to_vec(),
                    response: completion.text.clone(),
                    output_tokens: completion.output_tokens,
                };
                let _guard = self.write_lock.lock().unwrap();
                self.cache.store(&key, &entry)?;
                Ok(completion)
            }
        }
    }
}
