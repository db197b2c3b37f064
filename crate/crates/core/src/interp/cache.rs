use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::CompletionClient;
use super::InterpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve only from the cache; never contact the endpoint.
    Replay,
    /// Serve hits from the cache and forward misses without storing them.
    ReadThrough,
    /// Serve hits from the cache, forward misses and append the reply.
    Record,
}

/// 64-bit content key over everything that determines a completion.
pub fn cache_key(model: &str, prompt: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(temperature.to_bits().to_le_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    key: String,
    model: String,
    temperature: f64,
    completion: String,
}

/// Append-only JSONL store of completions.
pub struct CompletionCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
}

impl CompletionCache {
    /// Loads `path` if it exists. A trailing partial line (from an
    /// interrupted write) is ignored.
    pub fn open(path: &Path) -> Result<Self, InterpError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for line in reader.lines() {
                let line = line.map_err(io)?;
                if let Ok(e) = serde_json::from_str::<Entry>(&line) {
                    entries.insert(e.key, e.completion);
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn insert(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        completion: &str,
    ) -> Result<String, InterpError> {
        let key = cache_key(model, prompt, temperature);
        let mut entries = self.entries.lock().expect("cache lock");
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let line = serde_json::to_string(&Entry {
            key: key.clone(),
            model: model.into(),
            temperature,
            completion: completion.into(),
        })
        .map_err(|e| InterpError::Cache(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        f.write_all(format!("{line}\n").as_bytes()).map_err(io)?;
        entries.insert(key.clone(), completion.into());
        Ok(key)
    }
}

fn io(e: std::io::Error) -> InterpError {
    InterpError::Cache(e.to_string())
}

/// A client wrapped in a cache. With no inner client, misses outside
/// replay mode report the endpoint as unavailable.
pub struct CachedClient {
    pub cache: CompletionCache,
    pub mode: CacheMode,
    model: String,
    inner: Option<Box<dyn CompletionClient>>,
}

impl CachedClient {
    pub fn new(
        cache: CompletionCache,
        mode: CacheMode,
        model: &str,
        inner: Option<Box<dyn CompletionClient>>,
    ) -> Self {
        let model = inner
            .as_ref()
            .map_or_else(|| model.to_string(), |c| c.model().to_string());
        Self {
            cache,
            mode,
            model,
            inner,
        }
    }
}

impl CompletionClient for CachedClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, InterpError> {
        let key = cache_key(&self.model, prompt, temperature);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        match (self.mode, &self.inner) {
            (CacheMode::Replay, _) => Err(InterpError::CacheMiss(key)),
            (_, None) => Err(InterpError::EndpointUnavailable(format!(
                "no endpoint configured and no cached completion for {key}"
            ))),
            (CacheMode::ReadThrough, Some(c)) => c.complete(prompt, temperature),
            (CacheMode::Record, Some(c)) => {
                let reply = c.complete(prompt, temperature)?;
                self.cache
                    .insert(&self.model, prompt, temperature, &reply)?;
                Ok(reply)
            }
        }
    }
}
