//! HTTP/JSON service over the audit operations. Paths in requests are
//! resolved on the server's file system.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use tabaudit_core::api::*;
use tabaudit_core::confound::{classify_predictable_columns, detect_stuck_columns, duplicate_profile};
use tabaudit_core::ingest::{profile_columns, ParseConfig};
use tabaudit_core::manifest::InputFile;
use tabaudit_core::pipeline::{
    self, baseline, load_file, prepare_dataset, BaselineReport, CostEstimate, PipelineError, PlannedFile,
    ProgressFn,
};
use tabaudit_core::report::{load_results, render_report, write_run, AuditReport, RenderFormat};
use tabaudit_core::sampler::{build_trial_plan, TrialPlan};
use tabaudit_core::scoring::{levenshtein_distance, levenshtein_ratio};

pub struct ServiceError(ApiError);

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

impl<E: Into<ApiError>> From<E> for ServiceError {
    fn from(e: E) -> Self {
        ServiceError(e.into())
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn config_error(message: impl Into<String>) -> ServiceError {
    ServiceError(ApiError::new(ErrorKind::Config, message))
}

fn parse_error(message: impl Into<String>) -> ServiceError {
    ServiceError(ApiError::new(ErrorKind::Parse, message))
}

/// Runs blocking file work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError(ApiError::new(ErrorKind::Internal, e.to_string())))?
}

#[derive(Default)]
struct Jobs {
    next_id: AtomicU64,
    status: Mutex<HashMap<String, JobStatus>>,
}

impl Jobs {
    fn update(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(status) = self.status.lock().expect("job table poisoned").get_mut(id) {
            f(status);
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<Jobs>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/inspect", post(inspect))
        .route("/v1/plan", post(plan))
        .route("/v1/prompt", post(prompt))
        .route("/v1/levenshtein", post(levenshtein))
        .route("/v1/score", post(score))
        .route("/v1/baseline", post(baseline_op))
        .route("/v1/render", post(render))
        .route("/v1/estimate", post(estimate))
        .route("/v1/audits", post(start_audit))
        .route("/v1/audits/{id}", get(audit_status))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::default())).await
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

fn load(input: &InputFile) -> Result<tabaudit_core::ingest::DatasetFile, ServiceError> {
    load_file(input).map_err(|e| parse_error(format!("{}: {e}", input.path.display())))
}

async fn inspect(Json(req): Json<InspectRequest>) -> ApiResult<InspectResponse> {
    blocking(move || {
        let file = load(&req.input)?;
        let skipped = file.non_canonical_spacing;
        Ok(Json(InspectResponse {
            file_ref: file.source_name.clone(),
            parse: ParseConfig {
                delimiter: file.delimiter,
                has_header: file.header.is_some(),
                comment_prefix: req.input.parse.as_ref().and_then(|p| p.comment_prefix.clone()),
                expected_column_count: Some(file.column_count),
            },
            header: file.header.clone(),
            row_count: file.row_count(),
            column_count: file.column_count,
            non_canonical_spacing: skipped,
            columns: if skipped { Vec::new() } else { profile_columns(&file) },
            duplicate: duplicate_profile(&file),
            stuck_columns: if skipped {
                Vec::new()
            } else {
                detect_stuck_columns(&file, req.thresholds.min_run)
            },
            predictable_columns: if skipped {
                Vec::new()
            } else {
                classify_predictable_columns(&file, &req.thresholds)
            },
            column_analysis_skipped: skipped,
        }))
    })
    .await
}

async fn plan(Json(req): Json<PlanRequest>) -> ApiResult<TrialPlan> {
    blocking(move || {
        req.audit.validate().map_err(|e| config_error(e.to_string()))?;
        let file = load(&req.input)?;
        let plan = build_trial_plan(&file, &req.audit).map_err(|e| parse_error(e.to_string()))?;
        Ok(Json(plan))
    })
    .await
}

async fn prompt(Json(req): Json<PromptRequest>) -> ApiResult<PromptResponse> {
    blocking(move || {
        let file = load(&req.input)?;
        if file.source_name != req.plan.file_ref {
            return Err(config_error(format!(
                "plan is for {}, not {}",
                req.plan.file_ref, file.source_name
            )));
        }
        let planned = PlannedFile {
            file: Arc::new(file),
            plan: req.plan,
        };
        let config = tabaudit_core::report::ReportConfig {
            role_map: req.prompt.role_map,
            include_header: req.prompt.include_header,
            ..Default::default()
        };
        Ok(Json(PromptResponse {
            transcripts: pipeline::transcripts_for(&planned, &config)?,
        }))
    })
    .await
}

async fn levenshtein(Json(req): Json<LevenshteinRequest>) -> Json<LevenshteinResponse> {
    Json(LevenshteinResponse {
        distance: levenshtein_distance(&req.ground_truth, &req.generated),
        ratio: levenshtein_ratio(&req.ground_truth, &req.generated),
    })
}

async fn score(Json(req): Json<ScoreRequest>) -> ApiResult<AuditReport> {
    blocking(move || {
        let report = pipeline::score_external(&req.dataset, &req.inputs, &req.plans, &req.completions, &req.config)?;
        if let Some(dir) = &req.out {
            write_run(dir, &report).map_err(PipelineError::from)?;
        }
        Ok(Json(report))
    })
    .await
}

async fn baseline_op(Json(req): Json<BaselineRequest>) -> ApiResult<BaselineReport> {
    blocking(move || {
        let prepared = prepare_dataset(&req.dataset, &req.inputs, &req.audit)?;
        Ok(Json(baseline(&prepared, &req.audit, &req.thresholds, &req.scoring)))
    })
    .await
}

async fn render(Json(req): Json<RenderRequest>) -> ApiResult<RenderResponse> {
    blocking(move || {
        let format: RenderFormat = req.format.parse().map_err(PipelineError::from)?;
        let report = match (req.report, req.path) {
            (Some(report), None) => {
                report.verify_integrity().map_err(PipelineError::from)?;
                report
            }
            (None, Some(path)) => load_results(&path).map_err(PipelineError::from)?,
            _ => return Err(config_error("give exactly one of report and path")),
        };
        Ok(Json(RenderResponse {
            content: render_report(&report, format),
        }))
    })
    .await
}

async fn estimate(Json(req): Json<AuditRequest>) -> ApiResult<CostEstimate> {
    blocking(move || Ok(Json(pipeline::estimate(&req.manifest)?))).await
}

async fn start_audit(
    State(state): State<AppState>,
    Json(req): Json<AuditRequest>,
) -> Result<(StatusCode, Json<JobCreated>), ServiceError> {
    req.manifest.validate().map_err(PipelineError::from)?;
    let id = format!("job-{}", state.jobs.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    state.jobs.status.lock().expect("job table poisoned").insert(
        id.clone(),
        JobStatus {
            job_id: id.clone(),
            state: JobState::Running,
            progress: None,
            runs: Vec::new(),
            error: None,
        },
    );
    let jobs = state.jobs.clone();
    let job_id = id.clone();
    tokio::spawn(async move {
        let progress_jobs = jobs.clone();
        let progress_id = job_id.clone();
        let progress: ProgressFn = Arc::new(move |p| progress_jobs.update(&progress_id, |s| s.progress = Some(p)));
        let manifest = req.manifest;
        // Parsing and file writes block; keep them off the shared workers.
        let outcome = tokio::task::spawn_blocking(move || {
            tokio::runtime::Handle::current().block_on(pipeline::run_audit(&manifest, Some(progress)))
        })
        .await
        .unwrap_or_else(|e| Err(PipelineError::Other(format!("audit task failed: {e}"))));
        jobs.update(&job_id, |s| match outcome {
            Ok(runs) => {
                s.state = JobState::Succeeded;
                s.runs = runs;
            }
            Err(e) => {
                tracing::error!(job = %s.job_id, error = %e, "audit failed");
                s.state = JobState::Failed;
                s.error = Some(e.into());
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: id })))
}

async fn audit_status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<JobStatus> {
    state
        .jobs
        .status
        .lock()
        .expect("job table poisoned")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ServiceError(ApiError::new(ErrorKind::NotFound, format!("no job {id}"))))
}
