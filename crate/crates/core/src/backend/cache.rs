use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;

use super::{
    cache_key, transcript_digest, BackendError, CompletionBackend, CompletionResult, GenParams,
    TokenUsage,
};
use crate::prompt::PromptTranscript;

/// One line of the JSON-lines completion cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub transcript_digest: String,
    pub model_id: String,
    pub text: String,
    pub timestamp: String,
    pub token_usage: Option<TokenUsage>,
    #[serde(default)]
    pub backend_id: String,
}

impl CacheRecord {
    fn into_result(self) -> CompletionResult {
        CompletionResult {
            text: self.text,
            backend_id: self.backend_id,
            cached: true,
            latency_ms: 0,
            token_usage: self.token_usage,
            created_at: self.timestamp,
        }
    }
}

/// Append-only completion cache. Later records for the same key win on load.
pub struct CacheStore {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CacheRecord>>,
    writer: tokio::sync::Mutex<Option<tokio::fs::File>>,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: tokio::sync::Mutex::new(None),
        }
    }

    /// Loads existing records without opening the file for writing.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let store = Self::in_memory();
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        store.read_records(path, file)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            ..store
        })
    }

    /// Loads the file if it exists and appends every new record to it.
    pub async fn open(path: &Path) -> Result<Self, BackendError> {
        let store = Self::in_memory();
        if path.exists() {
            let file = std::fs::File::open(path)
                .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            store.read_records(path, file)?;
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            tokio::fs::create_dir_all(parent)
                .await
                .map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        let file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .await
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            writer: tokio::sync::Mutex::new(Some(file)),
            ..store
        })
    }

    fn read_records(&self, path: &Path, file: std::fs::File) -> Result<(), BackendError> {
        let mut entries = self.entries.lock().expect("cache lock poisoned");
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Cache(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                BackendError::Cache(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.insert(record.key.clone(), record);
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries
            .lock()
            .expect("cache lock poisoned")
            .get(key)
            .cloned()
    }

    pub async fn put(&self, record: CacheRecord) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().await;
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(|e| BackendError::Cache(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .await
                .map_err(|e| BackendError::Cache(e.to_string()))?;
            file.flush().await.map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        self.entries
            .lock()
            .expect("cache lock poisoned")
            .insert(record.key.clone(), record);
        Ok(())
    }
}

/// Serves completions from the cache only; never calls a model.
pub struct ReplayBackend {
    store: Arc<CacheStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<CacheStore>) -> Self {
        Self { store }
    }
}

#[async_trait]
impl CompletionBackend for ReplayBackend {
    fn backend_id(&self) -> String {
        "replay".to_string()
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let key = cache_key(transcript, params);
        self.store
            .get(&key)
            .map(CacheRecord::into_result)
            .ok_or(BackendError::CacheMiss(key))
    }
}

/// Read-through, write-through cache around another backend.
pub struct CachingBackend {
    inner: Arc<dyn CompletionBackend>,
    store: Arc<CacheStore>,
}

impl CachingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>, store: Arc<CacheStore>) -> Self {
        Self { inner, store }
    }
}

#[async_trait]
impl CompletionBackend for CachingBackend {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn is_remote(&self) -> bool {
        self.inner.is_remote()
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let key = cache_key(transcript, params);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit.into_result());
        }
        let result = self.inner.complete(transcript, params).await?;
        self.store
            .put(CacheRecord {
                key,
                transcript_digest: transcript_digest(transcript),
                model_id: params.model_id.clone(),
                text: result.text.clone(),
                timestamp: result.created_at.clone(),
                token_usage: result.token_usage,
                backend_id: result.backend_id.clone(),
            })
            .await?;
        Ok(result)
    }
}
