//! Confounds that let a model score well without having memorized anything:
//! copying the previous row, duplicated rows, stuck channels and columns that
//! are trivially predictable. Combined with scores into a qualified verdict.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::{profile_columns, ColumnProfile, DatasetFile, Monotonicity};
use crate::sampler::TrialPlan;
use crate::scoring::{aggregate_ratios, levenshtein_ratio, mean, DatasetScore, ScoreOptions};

/// Appended to every `no_evidence` verdict.
pub const NO_EVIDENCE_NOTE: &str = "Failing the row-completion test does not necessarily mean the \
dataset was absent from the model's training data; it only shows the rows could not be extracted \
by this probe.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub margin_min: f64,
    pub confound_dup: f64,
    pub min_run: usize,
    pub label_max_distinct: usize,
    pub label_min_run: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            margin_min: 0.10,
            confound_dup: 0.5,
            min_run: 20,
            label_max_distinct: 10,
            label_min_run: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyBaseline {
    pub mean: f64,
    pub per_trial: Vec<f64>,
    /// Best ratio over all prefix rows, not only the last one.
    pub best_mean: f64,
    pub best_per_trial: Vec<f64>,
}

/// Ratio a copy-the-last-prefix-row strategy achieves on each trial of the plan.
pub fn copy_baseline(plan: &TrialPlan, opts: &ScoreOptions) -> CopyBaseline {
    let mut per_trial = Vec::with_capacity(plan.trials.len());
    let mut best_per_trial = Vec::with_capacity(plan.trials.len());
    for trial in &plan.trials {
        let target = opts.normalize_reference(&trial.test.target_row);
        per_trial.push(levenshtein_ratio(
            target,
            opts.normalize_reference(trial.test.last_prefix_row()),
        ));
        best_per_trial.push(
            trial
                .test
                .prefix_rows
                .iter()
                .map(|row| levenshtein_ratio(target, opts.normalize_reference(row)))
                .fold(0.0, f64::max),
        );
    }
    CopyBaseline {
        mean: mean(per_trial.iter().copied()).unwrap_or(0.0),
        best_mean: mean(best_per_trial.iter().copied()).unwrap_or(0.0),
        per_trial,
        best_per_trial,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateProfile {
    pub row_count: usize,
    pub duplicate_rows: usize,
    /// Rows equal to their predecessor, over all rows.
    pub duplicate_row_fraction: f64,
    /// Maximal run length of identical rows, and how many such runs exist.
    pub run_histogram: BTreeMap<usize, usize>,
}

pub fn duplicate_profile(file: &DatasetFile) -> DuplicateProfile {
    let rows = &file.rows;
    let mut run_histogram = BTreeMap::new();
    let mut duplicate_rows = 0;
    let mut run = 0;
    for i in 0..rows.len() {
        if i > 0 && rows[i] == rows[i - 1] {
            duplicate_rows += 1;
            run += 1;
        } else {
            if run > 0 {
                *run_histogram.entry(run).or_insert(0) += 1;
            }
            run = 1;
        }
    }
    if run > 0 {
        *run_histogram.entry(run).or_insert(0) += 1;
    }
    DuplicateProfile {
        row_count: rows.len(),
        duplicate_rows,
        duplicate_row_fraction: if rows.is_empty() {
            0.0
        } else {
            duplicate_rows as f64 / rows.len() as f64
        },
        run_histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StuckColumn {
    pub index: usize,
    pub max_run_length: usize,
}

fn stuck_from_profiles(profiles: &[ColumnProfile], min_run: usize) -> Vec<StuckColumn> {
    profiles
        .iter()
        .filter(|p| p.max_run_length >= min_run.max(1))
        .map(|p| StuckColumn {
            index: p.index,
            max_run_length: p.max_run_length,
        })
        .collect()
}

pub fn detect_stuck_columns(file: &DatasetFile, min_run: usize) -> Vec<StuckColumn> {
    stuck_from_profiles(&profile_columns(file), min_run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnClass {
    FixedIncrementTimestamp,
    LowCardinalityLabel,
    Constant,
}

impl fmt::Display for ColumnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnClass::FixedIncrementTimestamp => "fixed-increment timestamp",
            ColumnClass::LowCardinalityLabel => "low-cardinality label",
            ColumnClass::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictableColumn {
    pub index: usize,
    pub class: ColumnClass,
}

/// Rules are tried in order: constant, timestamp, label.
pub fn classify_profile(profile: &ColumnProfile, thresholds: &Thresholds) -> Option<ColumnClass> {
    if profile.value_count == 0 {
        return None;
    }
    if profile.distinct_count == 1 {
        return Some(ColumnClass::Constant);
    }
    if let Some(stats) = &profile.increment_stats {
        let monotone = stats.monotonicity != Monotonicity::None;
        if monotone && stats.distinct_deltas <= 2 {
            return Some(ColumnClass::FixedIncrementTimestamp);
        }
    }
    if profile.distinct_count <= thresholds.label_max_distinct
        && profile.max_run_length >= thresholds.label_min_run
    {
        return Some(ColumnClass::LowCardinalityLabel);
    }
    None
}

fn predictable_from_profiles(profiles: &[ColumnProfile], thresholds: &Thresholds) -> Vec<PredictableColumn> {
    profiles
        .iter()
        .filter_map(|p| {
            classify_profile(p, thresholds).map(|class| PredictableColumn {
                index: p.index,
                class,
            })
        })
        .collect()
}

pub fn classify_predictable_columns(file: &DatasetFile, thresholds: &Thresholds) -> Vec<PredictableColumn> {
    predictable_from_profiles(&profile_columns(file), thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileConfound {
    pub file_ref: String,
    pub copy: CopyBaseline,
    pub duplicate: DuplicateProfile,
    pub stuck_columns: Vec<StuckColumn>,
    pub predictable_columns: Vec<PredictableColumn>,
    /// Column analyses were skipped because the cell split is lossy.
    pub column_analysis_skipped: bool,
}

/// Per-file confound analysis. Column-level checks are skipped for files whose
/// spacing is not canonical.
pub fn analyze_file(
    file: &DatasetFile,
    plan: &TrialPlan,
    thresholds: &Thresholds,
    opts: &ScoreOptions,
) -> FileConfound {
    let skip_columns = file.non_canonical_spacing;
    let profiles = if skip_columns { Vec::new() } else { profile_columns(file) };
    FileConfound {
        file_ref: file.source_name.clone(),
        copy: copy_baseline(plan, opts),
        duplicate: duplicate_profile(file),
        stuck_columns: stuck_from_profiles(&profiles, thresholds.min_run),
        predictable_columns: predictable_from_profiles(&profiles, thresholds),
        column_analysis_skipped: skip_columns,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileColumn<T> {
    pub file_ref: String,
    #[serde(flatten)]
    pub column: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundProfile {
    /// Unweighted mean over files of the per-file copy baseline.
    pub copy_baseline_mean: f64,
    pub copy_baseline_best: f64,
    /// Unweighted mean over files of the duplicated-successor fraction.
    pub duplicate_row_fraction: f64,
    pub stuck_columns: Vec<FileColumn<StuckColumn>>,
    pub predictable_columns: Vec<FileColumn<PredictableColumn>>,
    pub per_trial_copy: BTreeMap<String, Vec<f64>>,
    pub files: Vec<FileConfound>,
}

/// Combines per-file analyses in file-name order, the same order used for scores.
pub fn combine(mut files: Vec<FileConfound>) -> ConfoundProfile {
    files.sort_by(|a, b| a.file_ref.cmp(&b.file_ref));
    let copy = aggregate_ratios(files.iter().map(|f| (f.file_ref.as_str(), f.copy.per_trial.clone())));
    let best = aggregate_ratios(files.iter().map(|f| (f.file_ref.as_str(), f.copy.best_per_trial.clone())));
    ConfoundProfile {
        copy_baseline_mean: copy.map(|s| s.dataset_mean).unwrap_or(0.0),
        copy_baseline_best: best.map(|s| s.dataset_mean).unwrap_or(0.0),
        duplicate_row_fraction: mean(files.iter().map(|f| f.duplicate.duplicate_row_fraction)).unwrap_or(0.0),
        stuck_columns: files
            .iter()
            .flat_map(|f| {
                f.stuck_columns.iter().map(|c| FileColumn {
                    file_ref: f.file_ref.clone(),
                    column: c.clone(),
                })
            })
            .collect(),
        predictable_columns: files
            .iter()
            .flat_map(|f| {
                f.predictable_columns.iter().map(|c| FileColumn {
                    file_ref: f.file_ref.clone(),
                    column: c.clone(),
                })
            })
            .collect(),
        per_trial_copy: files
            .iter()
            .map(|f| (f.file_ref.clone(), f.copy.per_trial.clone()))
            .collect(),
        files,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLevel {
    StrongEvidence,
    WeakEvidence,
    Confounded,
    NoEvidence,
}

impl fmt::Display for VerdictLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictLevel::StrongEvidence => "strong_evidence",
            VerdictLevel::WeakEvidence => "weak_evidence",
            VerdictLevel::Confounded => "confounded",
            VerdictLevel::NoEvidence => "no_evidence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub level: VerdictLevel,
    pub llm_score: f64,
    pub copy_baseline: f64,
    pub margin: f64,
    pub notes: Vec<String>,
}

/// The decision rule on (score, copy baseline, duplicate fraction).
pub fn decide(llm_score: f64, copy_baseline: f64, duplicate_fraction: f64, thresholds: &Thresholds) -> VerdictLevel {
    let margin = llm_score - copy_baseline;
    if duplicate_fraction >= thresholds.confound_dup {
        VerdictLevel::Confounded
    } else if margin >= thresholds.margin_min {
        VerdictLevel::StrongEvidence
    } else if margin > 0.0 {
        VerdictLevel::WeakEvidence
    } else {
        VerdictLevel::NoEvidence
    }
}

pub fn memorization_verdict(score: &DatasetScore, profile: &ConfoundProfile, thresholds: &Thresholds) -> Verdict {
    let llm_score = score.dataset_mean;
    let copy = profile.copy_baseline_mean;
    let level = decide(llm_score, copy, profile.duplicate_row_fraction, thresholds);

    let mut notes = Vec::new();
    match level {
        VerdictLevel::Confounded => notes.push(format!(
            "{:.1}% of rows repeat their predecessor (threshold {:.1}%); a high score is explained by repetition",
            profile.duplicate_row_fraction * 100.0,
            thresholds.confound_dup * 100.0
        )),
        VerdictLevel::WeakEvidence => notes.push(format!(
            "score exceeds the copy-last-row baseline by {:.4}, below the {:.2} margin",
            llm_score - copy,
            thresholds.margin_min
        )),
        VerdictLevel::NoEvidence => notes.push(NO_EVIDENCE_NOTE.to_string()),
        VerdictLevel::StrongEvidence => {}
    }
    for stuck in &profile.stuck_columns {
        notes.push(format!(
            "{}: column {} repeats one value for up to {} consecutive rows",
            stuck.file_ref, stuck.column.index, stuck.column.max_run_length
        ));
    }
    for predictable in &profile.predictable_columns {
        notes.push(format!(
            "{}: column {} is a {} column and is predictable from context",
            predictable.file_ref, predictable.column.index, predictable.column.class
        ));
    }
    for file in profile.files.iter().filter(|f| f.column_analysis_skipped) {
        notes.push(format!(
            "{}: irregular spacing; column checks skipped, row-level checks only",
            file.file_ref
        ));
    }

    Verdict {
        level,
        llm_score,
        copy_baseline: copy,
        margin: llm_score - copy,
        notes,
    }
}
