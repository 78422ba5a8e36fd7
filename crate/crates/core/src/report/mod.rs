//! Audit reports: assembly, canonical persistence and integrity-checked reload.

mod diff;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::GenParams;
use crate::confound::{combine, decide, ConfoundProfile, FileConfound, Thresholds, Verdict};
use crate::ingest::Delimiter;
use crate::prompt::RoleMap;
use crate::sampler::AuditConfig;
use crate::scoring::{aggregate_scores, DatasetScore, ScoreOptions, TrialScore};

pub use diff::{diff_row, diff_row_with, Color, Granularity, RowDiff, Segment};
pub use render::{ansi_row, html_row, render_report, RenderFormat};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const HTML_FILE: &str = "report.html";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("integrity check failed: {0}")]
    IntegrityMismatch(String),
    #[error("unsupported format {0:?}")]
    UnsupportedFormat(String),
    #[error("report has no scored trials")]
    NoTrials,
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub audit: AuditConfig,
    pub gen: GenParams,
    pub thresholds: Thresholds,
    pub scoring: ScoreOptions,
    pub role_map: RoleMap,
    pub include_header: bool,
    pub granularity: Granularity,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            audit: AuditConfig::default(),
            gen: GenParams::default(),
            thresholds: Thresholds::default(),
            scoring: ScoreOptions::default(),
            role_map: RoleMap::default(),
            include_header: false,
            granularity: Granularity::Cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub generator: String,
    pub backend_id: String,
    /// Creation times of the earliest and latest completion.
    pub first_completion_at: String,
    pub last_completion_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub file_ref: String,
    pub delimiter: Delimiter,
    pub row_count: usize,
    pub non_canonical_spacing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub file_ref: String,
    pub start_index: usize,
    pub score: TrialScore,
    pub diff: RowDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub dataset: String,
    pub config: ReportConfig,
    pub files: Vec<FileSummary>,
    pub dataset_score: DatasetScore,
    pub confound: ConfoundProfile,
    pub verdict: Verdict,
    pub trials: Vec<TrialRecord>,
    pub provenance: Provenance,
    /// Files that failed and were left out, with the reason.
    pub notes: Vec<String>,
}

/// A scored trial before the diff is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub start_index: usize,
    pub score: TrialScore,
    /// When the completion was produced (RFC 3339).
    pub created_at: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileOutcome {
    pub summary: FileSummary,
    pub trials: Vec<ScoredTrial>,
    pub confound: FileConfound,
}

fn granularity_for(summary: &FileSummary, requested: Granularity) -> Granularity {
    if summary.non_canonical_spacing {
        Granularity::Char
    } else {
        requested
    }
}

fn trial_diff(record_score: &TrialScore, summary: &FileSummary, config: &ReportConfig) -> RowDiff {
    diff_row_with(
        config.scoring.normalize_reference(&record_score.ground_truth),
        &record_score.generated_row,
        &record_score.extra_lines,
        summary.delimiter.as_char(),
        granularity_for(summary, config.granularity),
    )
}

pub fn tool_version() -> String {
    format!("tabaudit {}", env!("CARGO_PKG_VERSION"))
}

/// Builds the report for one dataset from the files that completed.
pub fn assemble_report(
    dataset: &str,
    config: ReportConfig,
    mut outcomes: Vec<FileOutcome>,
    notes: Vec<String>,
) -> Result<AuditReport, ReportError> {
    outcomes.sort_by(|a, b| a.summary.file_ref.cmp(&b.summary.file_ref));
    let trials_by_file: BTreeMap<String, Vec<TrialScore>> = outcomes
        .iter()
        .map(|o| {
            (
                o.summary.file_ref.clone(),
                o.trials.iter().map(|t| t.score.clone()).collect(),
            )
        })
        .collect();
    let dataset_score = aggregate_scores(&trials_by_file).map_err(|_| ReportError::NoTrials)?;
    let confound = combine(outcomes.iter().map(|o| o.confound.clone()).collect());
    let verdict = crate::confound::memorization_verdict(&dataset_score, &confound, &config.thresholds);

    let all_trials = outcomes.iter().flat_map(|o| o.trials.iter());
    let backend_ids: BTreeSet<&str> = all_trials.clone().map(|t| t.backend_id.as_str()).collect();
    let first = all_trials.clone().map(|t| t.created_at.as_str()).min().unwrap_or_default();
    let last = all_trials.map(|t| t.created_at.as_str()).max().unwrap_or_default();
    let provenance = Provenance {
        tool_version: tool_version(),
        generator: crate::rng::GENERATOR_ID.to_string(),
        backend_id: backend_ids.into_iter().collect::<Vec<_>>().join("+"),
        first_completion_at: first.to_string(),
        last_completion_at: last.to_string(),
    };

    let mut trials = Vec::new();
    for outcome in &outcomes {
        let mut file_trials: Vec<&ScoredTrial> = outcome.trials.iter().collect();
        file_trials.sort_by_key(|t| t.score.trial_id);
        for t in file_trials {
            trials.push(TrialRecord {
                file_ref: outcome.summary.file_ref.clone(),
                start_index: t.start_index,
                diff: trial_diff(&t.score, &outcome.summary, &config),
                score: t.score.clone(),
            });
        }
    }

    Ok(AuditReport {
        dataset: dataset.to_string(),
        files: outcomes.iter().map(|o| o.summary.clone()).collect(),
        config,
        dataset_score,
        confound,
        verdict,
        trials,
        provenance,
        notes,
    })
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and shortest round-trip floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("report types serialize");
    let mut out = serde_json::to_string_pretty(&canonicalize(tree)).expect("values serialize");
    out.push('\n');
    out
}

/// Single-line canonical JSON, for JSON-lines streams.
pub fn to_canonical_line<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("report types serialize");
    serde_json::to_string(&canonicalize(tree)).expect("values serialize")
}

impl AuditReport {
    /// Re-derives every stored score, aggregate and verdict level from the
    /// stored strings and compares exactly.
    pub fn verify_integrity(&self) -> Result<(), ReportError> {
        let opts = &self.config.scoring;
        let mut by_file: BTreeMap<String, Vec<TrialScore>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for record in &self.trials {
            if !seen.insert((record.file_ref.as_str(), record.score.trial_id)) {
                return Err(ReportError::IntegrityMismatch(format!(
                    "{} trial {} appears twice",
                    record.file_ref, record.score.trial_id
                )));
            }
            let recomputed = record.score.recompute(opts);
            if recomputed.ratio.to_bits() != record.score.ratio.to_bits()
                || recomputed.lev_dist != record.score.lev_dist
                || recomputed.copy_ratio.to_bits() != record.score.copy_ratio.to_bits()
            {
                return Err(ReportError::IntegrityMismatch(format!(
                    "{} trial {}: stored ratio {} / distance {} / copy ratio {}, recomputed {} / {} / {}",
                    record.file_ref,
                    record.score.trial_id,
                    record.score.ratio,
                    record.score.lev_dist,
                    record.score.copy_ratio,
                    recomputed.ratio,
                    recomputed.lev_dist,
                    recomputed.copy_ratio
                )));
            }
            by_file
                .entry(record.file_ref.clone())
                .or_default()
                .push(record.score.clone());
        }
        let score = aggregate_scores(&by_file).map_err(|_| ReportError::NoTrials)?;
        if score != self.dataset_score {
            return Err(ReportError::IntegrityMismatch(format!(
                "stored dataset mean {} / per-file {:?}, recomputed {} / {:?}",
                self.dataset_score.dataset_mean,
                self.dataset_score.per_file,
                score.dataset_mean,
                score.per_file
            )));
        }
        for (file, trials) in &by_file {
            let copies: Vec<f64> = trials.iter().map(|t| t.copy_ratio).collect();
            if self.confound.per_trial_copy.get(file) != Some(&copies) {
                return Err(ReportError::IntegrityMismatch(format!(
                    "{file}: copy-baseline ratios disagree with trial records"
                )));
            }
        }
        let level = decide(
            score.dataset_mean,
            self.confound.copy_baseline_mean,
            self.confound.duplicate_row_fraction,
            &self.config.thresholds,
        );
        if level != self.verdict.level {
            return Err(ReportError::IntegrityMismatch(format!(
                "stored verdict {}, rule gives {level}",
                self.verdict.level
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ReportError> {
        let report: AuditReport = serde_json::from_str(text).map_err(|e| ReportError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        report.verify_integrity()?;
        Ok(report)
    }
}

/// Loads a `summary.json` (or a run directory containing one) and checks it.
pub fn load_results(path: &Path) -> Result<AuditReport, ReportError> {
    let file = if path.is_dir() {
        path.join(SUMMARY_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| io_err(&file, e))?;
    AuditReport::from_json(&text, &file.display().to_string())
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub summary: PathBuf,
    pub trials: PathBuf,
    pub html: PathBuf,
}

/// Appends trial records as JSON lines.
pub fn append_trials(path: &Path, records: &[TrialRecord]) -> Result<(), ReportError> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut buf = String::new();
    for record in records {
        buf.push_str(&to_canonical_line(record));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))
}

/// Writes `summary.json`, `trials.jsonl` and `report.html` into `dir`.
pub fn write_run(dir: &Path, report: &AuditReport) -> Result<RunOutputs, ReportError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let outputs = RunOutputs {
        summary: dir.join(SUMMARY_FILE),
        trials: dir.join(TRIALS_FILE),
        html: dir.join(HTML_FILE),
    };
    if outputs.trials.exists() {
        std::fs::remove_file(&outputs.trials).map_err(|e| io_err(&outputs.trials, e))?;
    }
    append_trials(&outputs.trials, &report.trials)?;
    std::fs::write(&outputs.summary, report.to_json()).map_err(|e| io_err(&outputs.summary, e))?;
    std::fs::write(&outputs.html, render_report(report, RenderFormat::Html))
        .map_err(|e| io_err(&outputs.html, e))?;
    Ok(outputs)
}
