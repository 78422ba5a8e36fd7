//! Models with known behaviour, used to validate the audit loop end to end.

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;

use super::{now_rfc3339, transcript_salt, BackendError, CompletionBackend, CompletionResult, GenParams};
use crate::ingest::DatasetFile;
use crate::prompt::PromptTranscript;
use crate::rng::SplitMix64;

/// Replacement characters for noisy output.
const NOISE_ALPHABET: &[char] = &['0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '.', ',', '-'];

/// Dataset files addressable by `source_name`.
#[derive(Debug, Clone, Default)]
pub struct FileIndex {
    files: Arc<HashMap<String, Arc<DatasetFile>>>,
}

impl FileIndex {
    pub fn new<I: IntoIterator<Item = Arc<DatasetFile>>>(files: I) -> Self {
        Self {
            files: Arc::new(
                files
                    .into_iter()
                    .map(|f| (f.source_name.clone(), f))
                    .collect(),
            ),
        }
    }

    pub fn get(&self, file_ref: &str) -> Option<&Arc<DatasetFile>> {
        self.files.get(file_ref)
    }

    /// Row that follows the first occurrence of the transcript's test prefix block.
    pub fn true_next_row(&self, transcript: &PromptTranscript) -> Result<String, BackendError> {
        let file = self
            .get(&transcript.file_ref)
            .ok_or_else(|| BackendError::UnknownFile(transcript.file_ref.clone()))?;
        let mut block: Vec<&str> = transcript.test_prefix().split('\n').collect();
        if let Some(header) = &file.header_line {
            if block.len() > 1 && block[0] == header {
                block.remove(0);
            }
        }
        let k = block.len();
        let rows = &file.rows;
        if k == 0 || rows.len() <= k {
            return Err(BackendError::PrefixNotFound(transcript.file_ref.clone()));
        }
        (0..rows.len() - k)
            .find(|&i| rows[i..i + k].iter().zip(&block).all(|(r, b)| r == b))
            .map(|i| rows[i + k].clone())
            .ok_or_else(|| BackendError::PrefixNotFound(transcript.file_ref.clone()))
    }
}

fn synthetic_result(text: String, backend_id: String) -> CompletionResult {
    CompletionResult {
        text,
        backend_id,
        cached: false,
        latency_ms: 0,
        token_usage: None,
        created_at: now_rfc3339(),
    }
}

/// Returns the true next row of the file.
pub struct MemorizerBackend {
    files: FileIndex,
}

impl MemorizerBackend {
    pub fn new(files: FileIndex) -> Self {
        Self { files }
    }
}

#[async_trait]
impl CompletionBackend for MemorizerBackend {
    fn backend_id(&self) -> String {
        "memorizer".to_string()
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        _params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let row = self.files.true_next_row(transcript)?;
        Ok(synthetic_result(row, self.backend_id()))
    }
}

/// Echoes the final prefix row.
pub struct CopyLastBackend;

#[async_trait]
impl CompletionBackend for CopyLastBackend {
    fn backend_id(&self) -> String {
        "copy_last".to_string()
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        _params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let last = transcript
            .test_prefix()
            .rsplit('\n')
            .next()
            .unwrap_or_default()
            .to_string();
        Ok(synthetic_result(last, self.backend_id()))
    }
}

/// Keeps the layout of the final prefix row (delimiters, signs, decimal
/// points) and draws every digit uniformly.
pub struct RandomBackend {
    seed: u64,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

#[async_trait]
impl CompletionBackend for RandomBackend {
    fn backend_id(&self) -> String {
        format!("random:{}", self.seed)
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        _params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let mut rng = SplitMix64::derive(self.seed, transcript_salt(transcript));
        let template = transcript.test_prefix().rsplit('\n').next().unwrap_or_default();
        let row: String = template
            .chars()
            .map(|c| {
                if c.is_ascii_digit() {
                    char::from(b'0' + rng.below(10) as u8)
                } else {
                    c
                }
            })
            .collect();
        Ok(synthetic_result(row, self.backend_id()))
    }
}

/// Memorizer whose output has each character replaced, with probability `p`,
/// by a different character.
pub struct NoisyMemorizerBackend {
    files: FileIndex,
    p: f64,
    seed: u64,
}

impl NoisyMemorizerBackend {
    pub fn new(files: FileIndex, p: f64, seed: u64) -> Self {
        Self { files, p, seed }
    }
}

pub(crate) fn corrupt(row: &str, p: f64, rng: &mut SplitMix64) -> String {
    row.chars()
        .map(|c| {
            if rng.unit() < p {
                let choices: Vec<char> = NOISE_ALPHABET.iter().copied().filter(|&a| a != c).collect();
                choices[rng.below(choices.len() as u64) as usize]
            } else {
                c
            }
        })
        .collect()
}

#[async_trait]
impl CompletionBackend for NoisyMemorizerBackend {
    fn backend_id(&self) -> String {
        format!("noisy_memorizer:p={}:seed={}", self.p, self.seed)
    }

    async fn complete(
        &self,
        transcript: &PromptTranscript,
        _params: &GenParams,
    ) -> Result<CompletionResult, BackendError> {
        let row = self.files.true_next_row(transcript)?;
        let mut rng = SplitMix64::derive(self.seed, transcript_salt(transcript));
        Ok(synthetic_result(corrupt(&row, self.p, &mut rng), self.backend_id()))
    }
}
