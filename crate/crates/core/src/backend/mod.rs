//! Completion backends: a remote chat-completions service, a record/replay
//! cache, and synthetic models with known behaviour.

mod cache;
mod http;
mod retry;
mod synthetic;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptTranscript;

pub use cache::{CacheRecord, CacheStore, CachingBackend, ReplayBackend};
pub use http::{HttpChatBackend, HttpConfig, API_KEY_ENV, BASE_URL_ENV};
pub use retry::RetryPolicy;
pub use synthetic::{CopyLastBackend, FileIndex, MemorizerBackend, NoisyMemorizerBackend, RandomBackend};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("service error (HTTP {status}): {message}")]
    Service { status: u16, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("no cached completion for key {0}")]
    CacheMiss(String),
    #[error("prefix block not found in {0}")]
    PrefixNotFound(String),
    #[error("file {0} is not known to this backend")]
    UnknownFile(String),
    #[error("cache file error: {0}")]
    Cache(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::RateLimited(_) | BackendError::Service { .. })
    }

    /// Errors that mean the remote service could not be reached or kept failing.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            BackendError::Network(_) | BackendError::RateLimited(_) | BackendError::Service { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_ms: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            model_id: "gpt-4".to_string(),
            temperature: 0.0,
            max_output_tokens: 256,
            timeout_ms: 60_000,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config("temperature must be a finite value >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::Config("max_output_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    /// RFC 3339 time the completion was produced; replays return the recorded time.
    pub created_at: String,
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    fn backend_id(&self) -> String;

    /// Whether calls cost money or leave the machine.
    fn is_remote(&self) -> bool {
        false
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        params: &GenParams,
    ) -> Result<CompletionResult, BackendError>;
}

#[async_trait]
impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn is_remote(&self) -> bool {
        (**self).is_remote()
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        (**self).complete(transcript, params).await
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn message_pairs(transcript: &PromptTranscript) -> Vec<[&str; 2]> {
    transcript
        .messages
        .iter()
        .map(|m| [m.role.as_str(), m.content.as_str()])
        .collect()
}

/// Digest over the ordered (role, content) pairs only.
pub fn transcript_digest(transcript: &PromptTranscript) -> String {
    let encoded = serde_json::to_string(&message_pairs(transcript)).expect("strings serialize");
    sha256_hex(encoded.as_bytes())
}

/// SHA-256 over a JSON array of the messages and decoding parameters.
pub fn cache_key(transcript: &PromptTranscript, params: &GenParams) -> String {
    let encoded = serde_json::to_string(&(
        "tabaudit-cache-v1",
        &params.model_id,
        params.temperature,
        params.max_output_tokens,
        message_pairs(transcript),
    ))
    .expect("strings serialize");
    sha256_hex(encoded.as_bytes())
}

/// 64 bits of the transcript digest, used to seed per-call synthetic noise.
pub(crate) fn transcript_salt(transcript: &PromptTranscript) -> u64 {
    let digest = Sha256::digest(
        serde_json::to_string(&message_pairs(transcript))
            .expect("strings serialize")
            .as_bytes(),
    );
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Serializable backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http {
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default = "default_concurrency")]
        concurrency: usize,
    },
    Replay,
    Memorizer,
    Copy,
    Random {
        #[serde(default)]
        seed: u64,
    },
    Noisy {
        p: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_concurrency() -> usize {
    4
}

impl BackendSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BackendSpec::Http { .. } => "http",
            BackendSpec::Replay => "replay",
            BackendSpec::Memorizer => "memorizer",
            BackendSpec::Copy => "copy",
            BackendSpec::Random { .. } => "random",
            BackendSpec::Noisy { .. } => "noisy",
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendSpec::Http { .. })
    }

    /// Parses a CLI backend name with its parameters.
    pub fn from_name(
        name: &str,
        seed: u64,
        noise: f64,
        base_url: Option<String>,
        concurrency: usize,
    ) -> Result<Self, BackendError> {
        Ok(match name {
            "http" => BackendSpec::Http {
                base_url,
                concurrency,
            },
            "replay" => BackendSpec::Replay,
            "memorizer" => BackendSpec::Memorizer,
            "copy" | "copy_last" => BackendSpec::Copy,
            "random" => BackendSpec::Random { seed },
            "noisy" | "noisy_memorizer" => BackendSpec::Noisy { p: noise, seed },
            other => return Err(BackendError::Config(format!("unknown backend {other:?}"))),
        })
    }

    /// Instantiates the backend. Synthetic models read their rows from `files`;
    /// `cache` backs replay and is written through for every other backend.
    pub fn build(
        &self,
        files: FileIndex,
        cache: Option<Arc<CacheStore>>,
    ) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        let inner: Arc<dyn CompletionBackend> = match self {
            BackendSpec::Http {
                base_url,
                concurrency,
            } => {
                let mut config = HttpConfig::from_env()?;
                if let Some(url) = base_url {
                    config.base_url = url.clone();
                }
                config.concurrency = (*concurrency).max(1);
                Arc::new(HttpChatBackend::new(config)?)
            }
            BackendSpec::Replay => {
                let store = cache.ok_or_else(|| {
                    BackendError::Config("replay backend needs a cache file".into())
                })?;
                return Ok(Arc::new(ReplayBackend::new(store)));
            }
            BackendSpec::Memorizer => Arc::new(MemorizerBackend::new(files)),
            BackendSpec::Copy => Arc::new(CopyLastBackend),
            BackendSpec::Random { seed } => Arc::new(RandomBackend::new(*seed)),
            BackendSpec::Noisy { p, seed } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(BackendError::Config(format!("noise probability {p} outside [0, 1]")));
                }
                Arc::new(NoisyMemorizerBackend::new(files, *p, *seed))
            }
        };
        Ok(match cache {
            Some(store) => Arc::new(CachingBackend::new(inner, store)),
            None => inner,
        })
    }
}
