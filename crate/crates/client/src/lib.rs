//! Typed client for the tabaudit HTTP service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use tabaudit_core::api::*;
use tabaudit_core::manifest::RunManifest;
use tabaudit_core::pipeline::{BaselineReport, CostEstimate, DatasetRun, PipelineError, Progress};
use tabaudit_core::report::AuditReport;
use tabaudit_core::sampler::TrialPlan;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{0}")]
    Api(ApiError),
    #[error("cannot reach tabaudit service: {0}")]
    Transport(String),
    #[error("unexpected response from service: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api(e) => e.exit_code(),
            _ => PipelineError::Other(String::new()).exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base_url: String,
    poll_interval: Duration,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            poll_interval: Duration::from_millis(200),
        }
    }

    pub fn with_poll_interval(mut self, interval: Duration) -> Self {
        self.poll_interval = interval;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T> {
        let status = response.status();
        let body = response
            .bytes()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.is_success() {
            serde_json::from_slice(&body).map_err(|e| ClientError::Decode(e.to_string()))
        } else {
            match serde_json::from_slice::<ApiError>(&body) {
                Ok(e) => Err(ClientError::Api(e)),
                Err(_) => Err(ClientError::Decode(format!(
                    "HTTP {status}: {}",
                    String::from_utf8_lossy(&body)
                ))),
            }
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let response = self
            .http
            .post(format!("{}{path}", self.base_url))
            .json(body)
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(response).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let response = self
            .http
            .get(format!("{}{path}", self.base_url))
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Self::decode(response).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn inspect(&self, req: &InspectRequest) -> Result<InspectResponse> {
        self.post("/v1/inspect", req).await
    }

    pub async fn plan(&self, req: &PlanRequest) -> Result<TrialPlan> {
        self.post("/v1/plan", req).await
    }

    pub async fn prompt(&self, req: &PromptRequest) -> Result<PromptResponse> {
        self.post("/v1/prompt", req).await
    }

    pub async fn levenshtein(&self, req: &LevenshteinRequest) -> Result<LevenshteinResponse> {
        self.post("/v1/levenshtein", req).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<AuditReport> {
        self.post("/v1/score", req).await
    }

    pub async fn baseline(&self, req: &BaselineRequest) -> Result<BaselineReport> {
        self.post("/v1/baseline", req).await
    }

    pub async fn render(&self, req: &RenderRequest) -> Result<RenderResponse> {
        self.post("/v1/render", req).await
    }

    pub async fn estimate(&self, manifest: &RunManifest) -> Result<CostEstimate> {
        self.post(
            "/v1/estimate",
            &AuditRequest {
                manifest: manifest.clone(),
            },
        )
        .await
    }

    pub async fn start_audit(&self, manifest: &RunManifest) -> Result<JobCreated> {
        self.post(
            "/v1/audits",
            &AuditRequest {
                manifest: manifest.clone(),
            },
        )
        .await
    }

    pub async fn audit_status(&self, job_id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/audits/{job_id}")).await
    }

    /// Starts an audit and polls until it finishes, reporting progress changes.
    pub async fn run_audit(
        &self,
        manifest: &RunManifest,
        mut on_progress: impl FnMut(&Progress),
    ) -> Result<Vec<DatasetRun>> {
        let job = self.start_audit(manifest).await?;
        let mut last = None;
        loop {
            let status = self.audit_status(&job.job_id).await?;
            if status.progress.is_some() && status.progress != last {
                on_progress(status.progress.as_ref().expect("checked above"));
                last = status.progress.clone();
            }
            match status.state {
                JobState::Running => tokio::time::sleep(self.poll_interval).await,
                JobState::Succeeded => return Ok(status.runs),
                JobState::Failed => {
                    return Err(ClientError::Api(status.error.unwrap_or_else(|| {
                        ApiError::new(ErrorKind::Internal, "audit failed without a reason")
                    })))
                }
            }
        }
    }
}
