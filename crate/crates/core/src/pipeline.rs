//! End-to-end audits: parse, plan, prompt, complete, score, analyse, persist.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CacheStore, CompletionBackend, CompletionResult, FileIndex, GenParams};
use crate::confound::{analyze_file, combine, ConfoundProfile, Thresholds};
use crate::ingest::{read_dataset_file, DatasetFile, IngestError};
use crate::manifest::{InputFile, ManifestError, RunManifest};
use crate::prompt::{transcript_for_trial, PromptOptions, PromptTranscript};
use crate::report::{
    assemble_report, write_run, AuditReport, FileOutcome, FileSummary, ReportConfig, ReportError, RunOutputs,
    ScoredTrial,
};
use crate::sampler::{build_trial_plan, AuditConfig, TrialPlan};
use crate::scoring::{score_trial, ScoreOptions};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("model service unavailable: {0}")]
    Network(String),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// Process exit status for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Parse(_) => 3,
            PipelineError::Network(_) => 4,
            PipelineError::Other(_) => 1,
        }
    }
}

impl From<ManifestError> for PipelineError {
    fn from(e: ManifestError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<ReportError> for PipelineError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Parse { .. } | ReportError::IntegrityMismatch(_) => PipelineError::Parse(e.to_string()),
            ReportError::UnsupportedFormat(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Other(other.to_string()),
        }
    }
}

impl From<BackendError> for PipelineError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) | BackendError::Auth(_) => PipelineError::Config(e.to_string()),
            _ if e.is_network() => PipelineError::Network(e.to_string()),
            other => PipelineError::Other(other.to_string()),
        }
    }
}

/// Progress of the completion stage for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub dataset: String,
    pub completed: usize,
    pub total: usize,
}

pub type ProgressFn = Arc<dyn Fn(Progress) + Send + Sync>;

/// A parsed file and its trial plan.
#[derive(Debug, Clone)]
pub struct PlannedFile {
    pub file: Arc<DatasetFile>,
    pub plan: TrialPlan,
}

/// Files of one dataset that parsed and planned, plus notes on those that did not.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub files: Vec<PlannedFile>,
    pub notes: Vec<String>,
}

impl PreparedDataset {
    pub fn file_index(&self) -> FileIndex {
        FileIndex::new(self.files.iter().map(|f| f.file.clone()))
    }
}

pub fn file_ref_for(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

pub fn load_file(input: &InputFile) -> Result<DatasetFile, IngestError> {
    let mut file = read_dataset_file(&input.path, input.parse.as_ref())?;
    file.source_name = file_ref_for(&input.path);
    Ok(file)
}

/// Parses and plans every file. A failing file is noted and skipped; if no
/// file survives, the dataset fails with the first error's class.
pub fn prepare_dataset(
    name: &str,
    inputs: &[InputFile],
    audit: &AuditConfig,
) -> Result<PreparedDataset, PipelineError> {
    audit.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut files = Vec::new();
    let mut notes = Vec::new();
    let mut first_error = None;
    for input in inputs {
        let shown = file_ref_for(&input.path);
        let outcome = load_file(input)
            .map_err(|e| PipelineError::Parse(format!("{shown}: {e}")))
            .and_then(|file| {
                let plan = build_trial_plan(&file, audit)
                    .map_err(|e| PipelineError::Parse(format!("{shown}: {e}")))?;
                Ok(PlannedFile {
                    file: Arc::new(file),
                    plan,
                })
            });
        match outcome {
            Ok(planned) => files.push(planned),
            Err(e) => {
                tracing::warn!(dataset = name, error = %e, "skipping file");
                notes.push(format!("skipped {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    if files.is_empty() {
        return Err(first_error.unwrap_or_else(|| PipelineError::Config(format!("dataset {name} has no input files"))));
    }
    files.sort_by(|a, b| a.file.source_name.cmp(&b.file.source_name));
    Ok(PreparedDataset {
        name: name.to_string(),
        files,
        notes,
    })
}

pub fn prompt_options(file: &DatasetFile, role_map: crate::prompt::RoleMap, include_header: bool) -> PromptOptions {
    PromptOptions {
        role_map,
        header_line: if include_header { file.header_line.clone() } else { None },
    }
}

/// One transcript per trial, in trial order.
pub fn transcripts_for(
    planned: &PlannedFile,
    config: &ReportConfig,
) -> Result<Vec<PromptTranscript>, PipelineError> {
    let options = prompt_options(&planned.file, config.role_map, config.include_header);
    planned
        .plan
        .trials
        .iter()
        .map(|t| {
            transcript_for_trial(&planned.file.source_name, t, &options)
                .map_err(|e| PipelineError::Other(format!("{}: {e}", planned.file.source_name)))
        })
        .collect()
}

/// Requests and rough prompt size of an audit, for the cost guardrail.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub datasets: usize,
    pub files: usize,
    pub requests: usize,
    pub prompt_chars: usize,
    /// About four characters per token.
    pub approx_prompt_tokens: usize,
    pub max_output_tokens: usize,
}

impl CostEstimate {
    pub fn add(&mut self, prepared: &PreparedDataset, config: &ReportConfig) -> Result<(), PipelineError> {
        self.datasets += 1;
        for planned in &prepared.files {
            self.files += 1;
            for t in transcripts_for(planned, config)? {
                self.requests += 1;
                self.prompt_chars += t.messages.iter().map(|m| m.content.chars().count()).sum::<usize>();
                self.max_output_tokens += config.gen.max_output_tokens as usize;
            }
        }
        self.approx_prompt_tokens = self.prompt_chars.div_ceil(4);
        Ok(())
    }
}

pub fn estimate(manifest: &RunManifest) -> Result<CostEstimate, PipelineError> {
    manifest.validate()?;
    let config = manifest.report_config();
    let mut estimate = CostEstimate::default();
    for ds in &manifest.datasets {
        let prepared = prepare_dataset(&ds.name, &ds.inputs()?, &config.audit)?;
        estimate.add(&prepared, &config)?;
    }
    Ok(estimate)
}

/// Runs completions with at most `concurrency` in flight, returning results
/// in input order.
pub async fn complete_all(
    backend: &dyn CompletionBackend,
    transcripts: &[PromptTranscript],
    params: &GenParams,
    concurrency: usize,
    mut on_done: impl FnMut(usize),
) -> Vec<Result<CompletionResult, BackendError>> {
    let mut results = Vec::with_capacity(transcripts.len());
    let mut pending = stream::iter(transcripts.iter().map(|t| backend.complete(t, params)))
        .buffered(concurrency.max(1));
    while let Some(result) = pending.next().await {
        results.push(result);
        on_done(results.len());
    }
    results
}

/// Scores completions for one planned file. `completions[i]` answers trial `i`.
pub fn score_file(
    planned: &PlannedFile,
    completions: Vec<CompletionResult>,
    config: &ReportConfig,
) -> FileOutcome {
    let file = &planned.file;
    let trials = planned
        .plan
        .trials
        .iter()
        .zip(completions)
        .map(|(trial, completion)| ScoredTrial {
            start_index: trial.test.start_index,
            score: score_trial(
                trial.trial_id,
                &trial.test.target_row,
                &completion,
                trial.test.last_prefix_row(),
                &config.scoring,
            ),
            created_at: completion.created_at,
            backend_id: completion.backend_id,
        })
        .collect();
    FileOutcome {
        summary: FileSummary {
            file_ref: file.source_name.clone(),
            delimiter: file.delimiter,
            row_count: file.row_count(),
            non_canonical_spacing: file.non_canonical_spacing,
        },
        trials,
        confound: analyze_file(file, &planned.plan, &config.thresholds, &config.scoring),
    }
}

/// Completes, scores and reports one prepared dataset. A file whose
/// completions fail is dropped and noted; a network failure ends the run.
pub async fn run_dataset(
    prepared: &PreparedDataset,
    backend: &dyn CompletionBackend,
    config: &ReportConfig,
    concurrency: usize,
    progress: Option<&ProgressFn>,
) -> Result<AuditReport, PipelineError> {
    let mut notes = prepared.notes.clone();
    let mut outcomes = Vec::new();
    let total: usize = prepared.files.iter().map(|f| f.plan.trials.len()).sum();
    let mut done = 0;
    let mut first_error = None;
    for planned in &prepared.files {
        let transcripts = transcripts_for(planned, config)?;
        let results = complete_all(backend, &transcripts, &config.gen, concurrency, |n| {
            if let Some(report) = progress {
                report(Progress {
                    dataset: prepared.name.clone(),
                    completed: done + n,
                    total,
                });
            }
        })
        .await;
        done += transcripts.len();
        match results.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(completions) => outcomes.push(score_file(planned, completions, config)),
            Err(e) if e.is_network() || matches!(e, BackendError::Auth(_) | BackendError::Config(_)) => {
                return Err(e.into())
            }
            Err(e) => {
                tracing::warn!(file = %planned.file.source_name, error = %e, "dropping file");
                notes.push(format!("skipped {}: {e}", planned.file.source_name));
                first_error.get_or_insert(e);
            }
        }
    }
    if outcomes.is_empty() {
        return Err(first_error
            .map(PipelineError::from)
            .unwrap_or_else(|| PipelineError::Other(format!("dataset {} produced no trials", prepared.name))));
    }
    Ok(assemble_report(&prepared.name, config.clone(), outcomes, notes)?)
}

pub async fn open_cache(manifest: &RunManifest) -> Result<Option<Arc<CacheStore>>, PipelineError> {
    let Some(path) = &manifest.cache else {
        return Ok(None);
    };
    let store = if matches!(manifest.backend()?, crate::backend::BackendSpec::Replay) {
        CacheStore::load(path)
    } else {
        CacheStore::open(path).await
    };
    Ok(Some(Arc::new(store.map_err(|e| PipelineError::Config(e.to_string()))?)))
}

/// A finished dataset and where its outputs went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRun {
    pub report: AuditReport,
    pub outputs: Option<RunOutputs>,
}

/// Runs every dataset in the manifest, one after another.
pub async fn run_audit(manifest: &RunManifest, progress: Option<ProgressFn>) -> Result<Vec<DatasetRun>, PipelineError> {
    manifest.validate()?;
    let config = manifest.report_config();
    let cache = open_cache(manifest).await?;
    let mut runs = Vec::new();
    for ds in &manifest.datasets {
        let prepared = prepare_dataset(&ds.name, &ds.inputs()?, &config.audit)?;
        let backend = manifest.backend()?.build(prepared.file_index(), cache.clone())?;
        let report = run_dataset(&prepared, backend.as_ref(), &config, manifest.concurrency, progress.as_ref()).await?;
        let outputs = match &manifest.out {
            Some(dir) => Some(write_run(&dir.join(&ds.name), &report)?),
            None => None,
        };
        runs.push(DatasetRun { report, outputs });
    }
    Ok(runs)
}

/// A completion obtained outside the tool, for offline scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCompletion {
    pub file_ref: String,
    pub trial_id: usize,
    pub text: String,
    #[serde(default)]
    pub created_at: Option<String>,
    #[serde(default)]
    pub backend_id: Option<String>,
}

/// Scores externally obtained completions against previously built plans.
/// Every trial of every plan needs exactly one completion.
pub fn score_external(
    dataset: &str,
    inputs: &[InputFile],
    plans: &[TrialPlan],
    completions: &[ExternalCompletion],
    config: &ReportConfig,
) -> Result<AuditReport, PipelineError> {
    let mut by_trial: BTreeMap<(&str, usize), &ExternalCompletion> = BTreeMap::new();
    for c in completions {
        if by_trial.insert((c.file_ref.as_str(), c.trial_id), c).is_some() {
            return Err(PipelineError::Config(format!(
                "{} trial {} has more than one completion",
                c.file_ref, c.trial_id
            )));
        }
    }
    let mut outcomes = Vec::new();
    for plan in plans {
        let input = inputs
            .iter()
            .find(|i| file_ref_for(&i.path) == plan.file_ref)
            .ok_or_else(|| PipelineError::Config(format!("no input file for plan {}", plan.file_ref)))?;
        let file = load_file(input).map_err(|e| PipelineError::Parse(format!("{}: {e}", plan.file_ref)))?;
        let results = plan
            .trials
            .iter()
            .map(|t| {
                let c = by_trial
                    .remove(&(plan.file_ref.as_str(), t.trial_id))
                    .ok_or_else(|| {
                        PipelineError::Config(format!("{} trial {} has no completion", plan.file_ref, t.trial_id))
                    })?;
                Ok(CompletionResult {
                    text: c.text.clone(),
                    backend_id: c.backend_id.clone().unwrap_or_else(|| "external".into()),
                    cached: false,
                    latency_ms: 0,
                    token_usage: None,
                    created_at: c.created_at.clone().unwrap_or_else(|| "unknown".into()),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let planned = PlannedFile {
            file: Arc::new(file),
            plan: plan.clone(),
        };
        outcomes.push(score_file(&planned, results, config));
    }
    if let Some(((file, trial), _)) = by_trial.into_iter().next() {
        return Err(PipelineError::Config(format!("completion for unknown trial {file} #{trial}")));
    }
    Ok(assemble_report(dataset, config.clone(), outcomes, Vec::new())?)
}

/// Confound statistics with no model calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub dataset: String,
    pub audit: AuditConfig,
    pub thresholds: Thresholds,
    pub confound: ConfoundProfile,
    /// Score a model must beat by the margin to count as strong evidence.
    pub strong_evidence_floor: f64,
    /// The duplicate fraction alone already confounds any result.
    pub confounded: bool,
    pub notes: Vec<String>,
}

pub fn baseline(prepared: &PreparedDataset, audit: &AuditConfig, thresholds: &Thresholds, scoring: &ScoreOptions) -> BaselineReport {
    let confound = combine(
        prepared
            .files
            .iter()
            .map(|p| analyze_file(&p.file, &p.plan, thresholds, scoring))
            .collect(),
    );
    BaselineReport {
        dataset: prepared.name.clone(),
        audit: audit.clone(),
        thresholds: thresholds.clone(),
        strong_evidence_floor: confound.copy_baseline_mean + thresholds.margin_min,
        confounded: confound.duplicate_row_fraction >= thresholds.confound_dup,
        confound,
        notes: prepared.notes.clone(),
    }
}
