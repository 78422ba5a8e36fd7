//! Seeded selection of test windows and few-shot example windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DatasetFile;
use crate::rng::SplitMix64;

/// Redraws allowed per few-shot window before giving up.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("file has {rows} rows; a window of {window_len} needs at least {}", window_len + 1)]
    FileTooShort { rows: usize, window_len: usize },
    #[error("no few-shot window avoids the target row of test window starting at {start_index}")]
    OverlapUnsatisfiable { start_index: usize },
    #[error("invalid audit config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub window_len: usize,
    pub n_fewshot: usize,
    pub n_trials: usize,
    pub seed: u64,
    pub allow_overlap: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            window_len: 10,
            n_fewshot: 7,
            n_trials: 25,
            seed: 0,
            allow_overlap: false,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.window_len == 0 {
            return Err(SampleError::InvalidConfig("window_len must be at least 1"));
        }
        if self.n_trials == 0 {
            return Err(SampleError::InvalidConfig("n_trials must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub start_index: usize,
    pub prefix_rows: Vec<String>,
    pub target_row: String,
}

impl WindowSample {
    pub fn target_index(&self) -> usize {
        self.start_index + self.prefix_rows.len()
    }

    /// Inclusive row range placed into a prompt: prefix plus target.
    pub fn covers(&self, row_index: usize) -> bool {
        (self.start_index..=self.target_index()).contains(&row_index)
    }

    pub fn last_prefix_row(&self) -> &str {
        self.prefix_rows.last().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub test: WindowSample,
    pub fewshot: Vec<WindowSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub file_ref: String,
    pub config: AuditConfig,
    pub generator: String,
    pub trials: Vec<Trial>,
}

fn window_at(file: &DatasetFile, start: usize, window_len: usize) -> WindowSample {
    WindowSample {
        start_index: start,
        prefix_rows: file.rows[start..start + window_len].to_vec(),
        target_row: file.rows[start + window_len].clone(),
    }
}

fn check_length(file: &DatasetFile, window_len: usize) -> Result<usize, SampleError> {
    let rows = file.row_count();
    if window_len == 0 || rows < window_len + 1 {
        return Err(SampleError::FileTooShort { rows, window_len });
    }
    Ok(rows - window_len)
}

/// Draws one window with a uniformly chosen start in `0..=rows - window_len - 1`.
pub fn sample_window(
    file: &DatasetFile,
    rng: &mut SplitMix64,
    window_len: usize,
) -> Result<WindowSample, SampleError> {
    let starts = check_length(file, window_len)?;
    let start = rng.below(starts as u64) as usize;
    Ok(window_at(file, start, window_len))
}

/// True when at least one window start keeps `target` out of its range.
fn has_admissible_window(starts: usize, window_len: usize, target: usize) -> bool {
    (0..starts).any(|s| !(s..=s + window_len).contains(&target))
}

pub fn build_trial_plan(file: &DatasetFile, cfg: &AuditConfig) -> Result<TrialPlan, SampleError> {
    cfg.validate()?;
    let starts = check_length(file, cfg.window_len)?;

    // Exhaustive feasibility check, so the outcome does not depend on the seed.
    if !cfg.allow_overlap && cfg.n_fewshot > 0 {
        if let Some(start) = (0..starts)
            .find(|&s| !has_admissible_window(starts, cfg.window_len, s + cfg.window_len))
        {
            return Err(SampleError::OverlapUnsatisfiable { start_index: start });
        }
    }

    let mut rng = SplitMix64::new(cfg.seed);
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for trial_id in 0..cfg.n_trials {
        let test = sample_window(file, &mut rng, cfg.window_len)?;
        let target = test.target_index();
        let mut fewshot = Vec::with_capacity(cfg.n_fewshot);
        for _ in 0..cfg.n_fewshot {
            let mut attempts = 0;
            let example = loop {
                let candidate = sample_window(file, &mut rng, cfg.window_len)?;
                if cfg.allow_overlap || !candidate.covers(target) {
                    break candidate;
                }
                attempts += 1;
                if attempts >= MAX_REDRAWS {
                    return Err(SampleError::OverlapUnsatisfiable {
                        start_index: test.start_index,
                    });
                }
            };
            fewshot.push(example);
        }
        trials.push(Trial {
            trial_id,
            test,
            fewshot,
        });
    }

    Ok(TrialPlan {
        file_ref: file.source_name.clone(),
        config: cfg.clone(),
        generator: crate::rng::GENERATOR_ID.to_string(),
        trials,
    })
}
