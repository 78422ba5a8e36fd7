//! Contamination audits for tabular sensor datasets: a row-completion
//! memorization probe scored by Levenshtein ratio, plus the confound analysis
//! that decides how much a good score actually says.

pub mod api;
pub mod backend;
pub mod confound;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod scoring;
