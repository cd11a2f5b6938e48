//! Declarative run configuration: one TOML file, with individual fields
//! overridable from the command line.

use std::path::{Path, PathBuf};

use adapteval::corpus::UtteranceCountMode;
use adapteval::judge::{CompletionBackend, CultureConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("config validation failed: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub dialogs: PathBuf,
    pub annotations: PathBuf,
}

fn default_threshold() -> u32 {
    80
}
fn default_significance() -> f64 {
    0.05
}
fn default_max_inflight() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// Fuzzy-match threshold for deciding whether a CSI survives in an
    /// adaptation. Recorded in every report footer.
    #[serde(default = "default_threshold")]
    pub csi_match_threshold: u32,
    #[serde(default = "default_significance")]
    pub significance_level: f64,
    /// Bound on concurrent in-flight completions per backend.
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    /// Transient-failure retries per request.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Accept out-of-bound dialogs at ingestion instead of rejecting them.
    #[serde(default)]
    pub permissive: bool,
    #[serde(default)]
    pub count_mode: UtteranceCountMode,
    /// Use exact permutation p-values (n <= 10) instead of the normal
    /// approximation.
    #[serde(default)]
    pub exact_p_values: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: CorpusPaths,
    pub run: RunSettings,
    #[serde(default)]
    pub culture: CultureConfig,
    /// Models whose adaptations are generated and evaluated.
    pub adapters: Vec<CompletionBackend>,
    /// The single judge backend used for extraction, scoring, and
    /// classification.
    pub judge: CompletionBackend,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub csi_match_threshold: Option<u32>,
    pub judge_model: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub max_inflight: Option<usize>,
    pub significance: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // paths in the file are relative to the file's directory
        if let Some(base) = path.parent() {
            config.corpus.dialogs = resolve(base, &config.corpus.dialogs);
            config.corpus.annotations = resolve(base, &config.corpus.annotations);
            config.run.out_dir = resolve(base, &config.run.out_dir);
            config.run.cache_dir = resolve(base, &config.run.cache_dir);
        }
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(t) = overrides.csi_match_threshold {
            self.run.csi_match_threshold = t;
        }
        if let Some(model) = &overrides.judge_model {
            self.judge.model_id = model.clone();
        }
        if let Some(dir) = &overrides.cache_dir {
            self.run.cache_dir = dir.clone();
        }
        if let Some(dir) = &overrides.out_dir {
            self.run.out_dir = dir.clone();
        }
        if let Some(n) = overrides.max_inflight {
            self.run.max_inflight = n;
        }
        if let Some(s) = overrides.significance {
            self.run.significance_level = s;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.corpus.dialogs.exists() {
            return Err(ConfigError::Validation(format!(
                "dialogs file {} does not exist",
                self.corpus.dialogs.display()
            )));
        }
        if !self.corpus.annotations.exists() {
            return Err(ConfigError::Validation(format!(
                "annotations file {} does not exist",
                self.corpus.annotations.display()
            )));
        }
        if self.adapters.is_empty() {
            return Err(ConfigError::Validation("at least one adapter backend is required".into()));
        }
        let mut ids: Vec<&str> = self.adapters.iter().map(|b| b.model_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.adapters.len() {
            return Err(ConfigError::Validation(
                "adapter model ids must be unique (one backend per model per run)".into(),
            ));
        }
        if self.run.csi_match_threshold > 100 {
            return Err(ConfigError::Validation(format!(
                "csi_match_threshold {} is out of 0..=100",
                self.run.csi_match_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.run.significance_level) {
            return Err(ConfigError::Validation(format!(
                "significance_level {} is out of 0..=1",
                self.run.significance_level
            )));
        }
        if self.run.max_inflight == 0 {
            return Err(ConfigError::Validation("max_inflight must be at least 1".into()));
        }
        for backend in self.adapters.iter().chain(std::iter::once(&self.judge)) {
            backend
                .validate()
                .map_err(|e| ConfigError::Validation(e.to_string()))?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Filesystem-safe slug for a model id, used in output file names.
pub fn model_slug(model_id: &str) -> String {
    let slug: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect();
    slug.trim_matches('-').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_slugs_are_filesystem_safe() {
        assert_eq!(model_slug("llama-3 70B"), "llama-3-70B");
        assert_eq!(model_slug("org/model:v1.2"), "org-model-v1.2");
    }
}
