use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::retry::RetryPolicy;
use super::{now_rfc3339, BackendError, CompletionBackend, CompletionResult, GenParams, TokenUsage};
use crate::prompt::PromptTranscript;

pub const API_KEY_ENV: &str = "TABAUDIT_API_KEY";
pub const BASE_URL_ENV: &str = "TABAUDIT_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl std::fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("concurrency", &self.concurrency)
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        Ok(Self {
            base_url: std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            concurrency: 4,
            retry: RetryPolicy::default(),
        })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpChatBackend {
    client: reqwest::Client,
    config: HttpConfig,
    permits: Semaphore,
    request_counter: AtomicU64,
}

impl HttpChatBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            permits: Semaphore::new(config.concurrency.max(1)),
            client,
            config,
            request_counter: AtomicU64::new(0),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn send_once(
        &self,
        body: &ChatRequest<'_>,
        params: &GenParams,
    ) -> Result<(String, Option<TokenUsage>), BackendError> {
        let mut request = self
            .client
            .post(self.endpoint())
            .timeout(params.timeout())
            .json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .await
            .map_err(|e| BackendError::Network(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Network(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(text)),
            429 => return Err(BackendError::RateLimited(text)),
            s @ 500..=599 => return Err(BackendError::Service { status: s, message: text }),
            s => return Err(BackendError::Rejected { status: s, message: text }),
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("response has no choices".into()))?;
        let usage = parsed.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            output_tokens: u.completion_tokens,
        });
        Ok((choice.message.content.unwrap_or_default(), usage))
    }
}

#[async_trait]
impl CompletionBackend for HttpChatBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn is_remote(&self) -> bool {
        true
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        params.validate()?;
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let body = ChatRequest {
            model: &params.model_id,
            messages: transcript
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.content,
                })
                .collect(),
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        };
        let started = Instant::now();
        let jitter_seed = self.request_counter.fetch_add(1, Ordering::Relaxed)
            ^ started.elapsed().as_nanos() as u64
            ^ super::transcript_salt(transcript);
        let (text, token_usage) = self
            .config
            .retry
            .run(jitter_seed, |_| self.send_once(&body, params))
            .await?;
        Ok(CompletionResult {
            text,
            backend_id: self.backend_id(),
            cached: false,
            latency_ms: started.elapsed().as_millis() as u64,
            token_usage,
            created_at: now_rfc3339(),
        })
    }
}
