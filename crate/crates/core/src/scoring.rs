//! Edit distance, the length-normalised ratio, candidate extraction and
//! file/dataset aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("completion contains no non-empty line")]
    EmptyCompletion,
    #[error("no trials to aggregate")]
    NoTrials,
    #[error("file {0} has no trials")]
    FileWithoutTrials(String),
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
///
/// Two-row dynamic programme; the shorter string indexes the rows.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (long, short) = if a.len() >= b.len() { (&a, &b) } else { (&b, &a) };
    if short.is_empty() {
        return long.len();
    }

    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut curr = vec![0usize; short.len() + 1];
    for (i, lc) in long.iter().enumerate() {
        curr[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let substitute = prev[j] + usize::from(lc != sc);
            let delete = prev[j + 1] + 1;
            let insert = curr[j] + 1;
            curr[j + 1] = substitute.min(delete).min(insert);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// `1 - dist / (len_gt + len_gen)`, with two empty strings scoring 1.0.
pub fn levenshtein_ratio(gt: &str, gen: &str) -> f64 {
    let total = gt.chars().count() + gen.chars().count();
    if total == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(gt, gen) as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Drop markdown code-fence lines and markers around the row.
    pub strip_fences: bool,
    /// Score lines exactly as emitted: no whitespace trimming of either row.
    pub raw: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            strip_fences: true,
            raw: false,
        }
    }
}

impl ScoreOptions {
    /// Same normalisation as applied to generated rows, so a verbatim copy
    /// of the file row always scores 1.0.
    pub fn normalize_reference<'a>(&self, row: &'a str) -> &'a str {
        if self.raw {
            row
        } else {
            row.trim()
        }
    }
}

fn is_fence_line(line: &str) -> bool {
    line.strip_prefix("```")
        .is_some_and(|lang| lang.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'))
}

fn clean_line(line: &str, opts: &ScoreOptions) -> Option<String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if opts.strip_fences && is_fence_line(line.trim()) {
        return None;
    }
    let mut cleaned = if opts.raw { line } else { line.trim() };
    if opts.strip_fences {
        cleaned = cleaned.strip_prefix("```").unwrap_or(cleaned);
        cleaned = cleaned.strip_suffix("```").unwrap_or(cleaned);
        if !opts.raw {
            cleaned = cleaned.trim();
        }
    }
    (!cleaned.trim().is_empty()).then(|| cleaned.to_string())
}

/// First non-empty line of the completion, plus any further non-empty lines.
pub fn extract_candidate_row(
    completion_text: &str,
    opts: &ScoreOptions,
) -> Result<(String, Vec<String>), ScoreError> {
    let mut lines = completion_text
        .split('\n')
        .filter_map(|line| clean_line(line, opts));
    let row = lines.next().ok_or(ScoreError::EmptyCompletion)?;
    Ok((row, lines.collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_id: usize,
    pub ground_truth: String,
    pub generated_row: String,
    pub extra_lines: Vec<String>,
    pub lev_dist: usize,
    pub ratio: f64,
    /// Last prefix row, the copy-last-row prediction.
    pub copy_source: String,
    pub copy_ratio: f64,
    /// The completion had no usable line; scored as an empty row.
    pub empty: bool,
}

impl TrialScore {
    /// Recomputes every derived field from the stored strings.
    pub fn recompute(&self, opts: &ScoreOptions) -> TrialScore {
        let gt = opts.normalize_reference(&self.ground_truth);
        TrialScore {
            lev_dist: levenshtein_distance(gt, &self.generated_row),
            ratio: levenshtein_ratio(gt, &self.generated_row),
            copy_ratio: levenshtein_ratio(gt, opts.normalize_reference(&self.copy_source)),
            ..self.clone()
        }
    }
}

/// Scores one completion text against the ground-truth row.
pub fn score_text(
    trial_id: usize,
    ground_truth: &str,
    completion_text: &str,
    copy_source: &str,
    opts: &ScoreOptions,
) -> TrialScore {
    let (generated_row, extra_lines, empty) = match extract_candidate_row(completion_text, opts) {
        Ok((row, extra)) => (row, extra, false),
        Err(_) => (String::new(), Vec::new(), true),
    };
    let gt = opts.normalize_reference(ground_truth);
    TrialScore {
        trial_id,
        ground_truth: ground_truth.to_string(),
        lev_dist: levenshtein_distance(gt, &generated_row),
        ratio: levenshtein_ratio(gt, &generated_row),
        copy_ratio: levenshtein_ratio(gt, opts.normalize_reference(copy_source)),
        copy_source: copy_source.to_string(),
        generated_row,
        extra_lines,
        empty,
    }
}

pub fn score_trial(
    trial_id: usize,
    ground_truth: &str,
    completion: &crate::backend::CompletionResult,
    copy_source: &str,
    opts: &ScoreOptions,
) -> TrialScore {
    score_text(trial_id, ground_truth, &completion.text, copy_source, opts)
}

/// Arithmetic mean, summed left to right. Every average in the crate goes
/// through here so equal inputs give bit-equal outputs.
pub fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub per_file: BTreeMap<String, f64>,
    /// Unweighted mean of the per-file means.
    pub dataset_mean: f64,
    /// Mean over all trials pooled, i.e. files weighted by trial count.
    pub trial_weighted_mean: f64,
    pub trial_count: usize,
}

pub fn aggregate_scores(
    trials_by_file: &BTreeMap<String, Vec<TrialScore>>,
) -> Result<DatasetScore, ScoreError> {
    aggregate_ratios(
        trials_by_file
            .iter()
            .map(|(file, trials)| (file.as_str(), trials.iter().map(|t| t.ratio).collect())),
    )
}

/// Aggregation over plain per-file ratio lists, in the given file order.
pub fn aggregate_ratios<'a, I>(ratios_by_file: I) -> Result<DatasetScore, ScoreError>
where
    I: IntoIterator<Item = (&'a str, Vec<f64>)>,
{
    let mut per_file = BTreeMap::new();
    let mut pooled = Vec::new();
    for (file, ratios) in ratios_by_file {
        let file_mean =
            mean(ratios.iter().copied()).ok_or_else(|| ScoreError::FileWithoutTrials(file.to_string()))?;
        per_file.insert(file.to_string(), file_mean);
        pooled.extend(ratios);
    }
    let dataset_mean = mean(per_file.values().copied()).ok_or(ScoreError::NoTrials)?;
    Ok(DatasetScore {
        dataset_mean,
        trial_weighted_mean: mean(pooled.iter().copied()).unwrap_or(dataset_mean),
        trial_count: pooled.len(),
        per_file,
    })
}
