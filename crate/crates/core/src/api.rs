//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::confound::{DuplicateProfile, PredictableColumn, StuckColumn, Thresholds};
use crate::ingest::{ColumnProfile, ParseConfig};
use crate::manifest::{InputFile, PromptSettings, RunManifest};
use crate::pipeline::{DatasetRun, ExternalCompletion, PipelineError, Progress};
use crate::prompt::PromptTranscript;
use crate::report::{AuditReport, ReportConfig};
use crate::sampler::{AuditConfig, TrialPlan};
use crate::scoring::ScoreOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Parse,
    Network,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.kind {
            ErrorKind::Config => 400,
            ErrorKind::NotFound => 404,
            ErrorKind::Parse => 422,
            ErrorKind::Network => 502,
            ErrorKind::Internal => 500,
        }
    }

    pub fn exit_code(&self) -> i32 {
        PipelineError::from(self.clone()).exit_code()
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Config(_) => ErrorKind::Config,
            PipelineError::Parse(_) => ErrorKind::Parse,
            PipelineError::Network(_) => ErrorKind::Network,
            PipelineError::Other(_) => ErrorKind::Internal,
        };
        ApiError::new(kind, e.to_string())
    }
}

impl From<ApiError> for PipelineError {
    fn from(e: ApiError) -> Self {
        match e.kind {
            ErrorKind::Config | ErrorKind::NotFound => PipelineError::Config(e.message),
            ErrorKind::Parse => PipelineError::Parse(e.message),
            ErrorKind::Network => PipelineError::Network(e.message),
            ErrorKind::Internal => PipelineError::Other(e.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectRequest {
    pub input: InputFile,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectResponse {
    pub file_ref: String,
    pub parse: ParseConfig,
    pub header: Option<Vec<String>>,
    pub row_count: usize,
    pub column_count: usize,
    pub non_canonical_spacing: bool,
    pub columns: Vec<ColumnProfile>,
    pub duplicate: DuplicateProfile,
    pub stuck_columns: Vec<StuckColumn>,
    pub predictable_columns: Vec<PredictableColumn>,
    pub column_analysis_skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub input: InputFile,
    #[serde(default)]
    pub audit: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub input: InputFile,
    pub plan: TrialPlan,
    #[serde(default)]
    pub prompt: PromptSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub transcripts: Vec<PromptTranscript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevenshteinRequest {
    pub ground_truth: String,
    pub generated: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevenshteinResponse {
    pub distance: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub dataset: String,
    pub inputs: Vec<InputFile>,
    pub plans: Vec<TrialPlan>,
    pub completions: Vec<ExternalCompletion>,
    #[serde(default)]
    pub config: ReportConfig,
    /// Run directory to write outputs into.
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRequest {
    pub dataset: String,
    pub inputs: Vec<InputFile>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub scoring: ScoreOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    /// A `summary.json` or run directory on the server.
    #[serde(default)]
    pub path: Option<std::path::PathBuf>,
    #[serde(default)]
    pub report: Option<AuditReport>,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRequest {
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub progress: Option<Progress>,
    #[serde(default)]
    pub runs: Vec<DatasetRun>,
    #[serde(default)]
    pub error: Option<ApiError>,
}
