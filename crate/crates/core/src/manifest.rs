//! Run manifests: which files to audit, with what settings, against which backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendSpec, GenParams};
use crate::confound::Thresholds;
use crate::ingest::ParseConfig;
use crate::prompt::RoleMap;
use crate::report::{Granularity, ReportConfig};
use crate::sampler::AuditConfig;
use crate::scoring::ScoreOptions;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid manifest: {0}")]
    Syntax(String),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// File paths or glob patterns.
    pub paths: Vec<String>,
    /// Parse settings keyed by path or glob pattern; the first match wins.
    #[serde(default)]
    pub parse: BTreeMap<String, ParseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSettings {
    pub role_map: RoleMap,
    pub include_header: bool,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            role_map: RoleMap::UserAssistant,
            include_header: false,
        }
    }
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub gen: GenParams,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub scoring: ScoreOptions,
    #[serde(default)]
    pub prompt: PromptSettings,
    #[serde(default)]
    pub granularity: Granularity,
    /// Run directory; each dataset writes into `<out>/<name>/`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// JSON-lines completion cache, recorded or replayed.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Completions in flight at once.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            audit: AuditConfig::default(),
            gen: GenParams::default(),
            backend: None,
            thresholds: Thresholds::default(),
            scoring: ScoreOptions::default(),
            prompt: PromptSettings::default(),
            granularity: Granularity::Cell,
            out: None,
            cache: None,
            concurrency: default_concurrency(),
        }
    }
}

/// A concrete input file with its optional parse settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    #[serde(default)]
    pub parse: Option<ParseConfig>,
}

fn has_glob_chars(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

/// Expands paths and glob patterns into files, in sorted order without repeats.
pub fn expand_paths(patterns: &[String]) -> Result<Vec<PathBuf>, ManifestError> {
    let mut out = Vec::new();
    for pattern in patterns {
        if has_glob_chars(pattern) {
            let matches = glob::glob(pattern)
                .map_err(|e| ManifestError::Invalid(format!("bad pattern {pattern:?}: {e}")))?;
            let mut found: Vec<PathBuf> = matches
                .filter_map(Result::ok)
                .filter(|p| p.is_file())
                .collect();
            if found.is_empty() {
                return Err(ManifestError::Invalid(format!("pattern {pattern:?} matches no files")));
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(PathBuf::from(pattern));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|p| seen.insert(p.clone()));
    Ok(out)
}

impl DatasetSpec {
    fn parse_for(&self, path: &Path) -> Option<ParseConfig> {
        let shown = path.to_string_lossy();
        self.parse.iter().find_map(|(key, cfg)| {
            let matched = if has_glob_chars(key) {
                glob::Pattern::new(key).is_ok_and(|p| p.matches(&shown))
            } else {
                Path::new(key) == path
            };
            matched.then(|| cfg.clone())
        })
    }

    pub fn inputs(&self) -> Result<Vec<InputFile>, ManifestError> {
        Ok(expand_paths(&self.paths)?
            .into_iter()
            .map(|path| InputFile {
                parse: self.parse_for(&path),
                path,
            })
            .collect())
    }
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        toml::from_str(text).map_err(|e| ManifestError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut manifest = Self::from_toml(&text)?;
        manifest.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        Ok(manifest)
    }

    /// Makes relative paths in the manifest relative to `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        if base.as_os_str().is_empty() {
            return;
        }
        let join = |p: &str| -> String {
            if Path::new(p).is_absolute() {
                p.to_string()
            } else {
                base.join(p).to_string_lossy().into_owned()
            }
        };
        for ds in &mut self.datasets {
            ds.paths = ds.paths.iter().map(|p| join(p)).collect();
            ds.parse = std::mem::take(&mut ds.parse)
                .into_iter()
                .map(|(k, v)| (join(&k), v))
                .collect();
        }
        for p in [&mut self.out, &mut self.cache].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn backend(&self) -> Result<&BackendSpec, ManifestError> {
        self.backend
            .as_ref()
            .ok_or_else(|| ManifestError::Invalid("no backend selected".into()))
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |m: String| Err(ManifestError::Invalid(m));
        if self.datasets.is_empty() {
            return invalid("at least one dataset is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for ds in &self.datasets {
            if ds.name.is_empty() || ds.name.contains(['/', '\\']) || ds.name.starts_with('.') {
                return invalid(format!("dataset name {:?} is not a plain name", ds.name));
            }
            if !names.insert(&ds.name) {
                return invalid(format!("dataset {:?} is listed twice", ds.name));
            }
            if ds.paths.is_empty() {
                return invalid(format!("dataset {:?} has no input paths", ds.name));
            }
        }
        self.audit.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        self.gen.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if self.concurrency == 0 {
            return invalid("concurrency must be at least 1".into());
        }
        let t = &self.thresholds;
        if !(t.confound_dup.is_finite() && t.margin_min.is_finite()) {
            return invalid("thresholds must be finite".into());
        }
        match self.backend()? {
            BackendSpec::Replay if self.cache.is_none() => {
                return invalid("the replay backend needs a cache file".into())
            }
            BackendSpec::Noisy { p, .. } if !(0.0..=1.0).contains(p) => {
                return invalid(format!("noise probability {p} outside [0, 1]"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            audit: self.audit.clone(),
            gen: self.gen.clone(),
            thresholds: self.thresholds.clone(),
            scoring: self.scoring,
            role_map: self.prompt.role_map,
            include_header: self.prompt.include_header,
            granularity: self.granularity,
        }
    }
}
