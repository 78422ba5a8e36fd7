//! Chat transcripts for the row-completion probe.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{Trial, WindowSample};

pub const SYSTEM_MESSAGE: &str = "You are a helpful autocomplete bot for wearable sensor datasets. \
Your task is to provide rows as they are contained in sensor datasets. \
The user provides a number of contiguous rows from a sensor dataset. \
You then provide the next row from the dataset.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("window starting at row {0} has no prefix rows")]
    EmptyPrefix(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Role that carries the few-shot answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleMap {
    /// Answers as assistant turns.
    #[default]
    UserAssistant,
    /// Answers as system turns, the literal "user and system" reading.
    UserSystem,
}

impl RoleMap {
    fn answer_role(self) -> Role {
        match self {
            RoleMap::UserAssistant => Role::Assistant,
            RoleMap::UserSystem => Role::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptOptions {
    #[serde(default)]
    pub role_map: RoleMap,
    /// Header line prepended to every prefix block; `None` leaves headers out.
    #[serde(default)]
    pub header_line: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub trial_id: usize,
    pub file_ref: String,
    pub messages: Vec<ChatMessage>,
}

impl PromptTranscript {
    /// Content of the final user message: the test prefix.
    pub fn test_prefix(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub fn system_message() -> &'static str {
    SYSTEM_MESSAGE
}

fn prefix_block(window: &WindowSample, header: Option<&str>) -> Result<String, PromptError> {
    if window.prefix_rows.is_empty() {
        return Err(PromptError::EmptyPrefix(window.start_index));
    }
    let body = window.prefix_rows.join("\n");
    Ok(match header {
        Some(h) => format!("{h}\n{body}"),
        None => body,
    })
}

pub fn assemble_transcript(
    trial_id: usize,
    file_ref: &str,
    test: &WindowSample,
    fewshot: &[WindowSample],
    options: &PromptOptions,
) -> Result<PromptTranscript, PromptError> {
    let header = options.header_line.as_deref();
    let mut messages = Vec::with_capacity(2 + 2 * fewshot.len());
    messages.push(ChatMessage {
        role: Role::System,
        content: SYSTEM_MESSAGE.to_string(),
    });
    for example in fewshot {
        messages.push(ChatMessage {
            role: Role::User,
            content: prefix_block(example, header)?,
        });
        messages.push(ChatMessage {
            role: options.role_map.answer_role(),
            content: example.target_row.clone(),
        });
    }
    messages.push(ChatMessage {
        role: Role::User,
        content: prefix_block(test, header)?,
    });
    Ok(PromptTranscript {
        trial_id,
        file_ref: file_ref.to_string(),
        messages,
    })
}

pub fn transcript_for_trial(
    file_ref: &str,
    trial: &Trial,
    options: &PromptOptions,
) -> Result<PromptTranscript, PromptError> {
    assemble_transcript(trial.trial_id, file_ref, &trial.test, &trial.fewshot, options)
}
