//! The pipeline configuration file and its flag overrides.

use std::path::{Path, PathBuf};

use pvcohort_core::classifier::{FeatureConfig, GridSearchSpec};
use pvcohort_core::corpus::{KeywordFilterConfig, DEFAULT_KEYWORDS};
use pvcohort_core::matcher::MatcherConfig;
use pvcohort_core::stats::StatsConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Overrides the workspace directory named in the config file.
pub const WORKSPACE_ENV: &str = "PVCOHORT_WORKSPACE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierMode {
    /// Fit a TF-IDF model on `training_labels`, or apply a saved `model`.
    Train {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        training_labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<PathBuf>,
        #[serde(default)]
        grid: GridSearchSpec,
    },
    /// Use labels produced by an external model.
    ExternalLabels {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
    },
}

fn default_keywords() -> Vec<String> {
    DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

fn default_true() -> bool {
    true
}

fn default_workspace() -> PathBuf {
    PathBuf::from("workspace")
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

fn default_annotators() -> usize {
    3
}

/// As written in the config file. Relative paths are resolved against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub posts: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation_triggers: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[serde(default = "default_workspace")]
    pub workspace: PathBuf,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
    #[serde(default = "default_keywords")]
    pub keywords: Vec<String>,
    #[serde(default = "default_true")]
    pub include_hashtag_forms: bool,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    pub classifier: ClassifierMode,
    #[serde(default = "default_annotators")]
    pub annotators_per_task: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threshold: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Validated configuration with absolute paths.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: PipelineConfig,
    /// Directory of the config file.
    pub base: PathBuf,
}

impl ResolvedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        let workspace_env = std::env::var_os(WORKSPACE_ENV).map(PathBuf::from);
        Self::from_config(config, &base, overrides, workspace_env)
    }

    pub fn from_config(
        mut config: PipelineConfig,
        base: &Path,
        overrides: &Overrides,
        workspace_env: Option<PathBuf>,
    ) -> Result<Self> {
        let base = std::path::absolute(base).map_err(|e| CliError::config(e.to_string()))?;
        if let Some(t) = overrides.threshold {
            config.matcher.similarity_threshold = t;
        }
        if let Some(a) = overrides.alpha {
            config.stats.alpha = a;
        }
        if let Some(s) = overrides.seed {
            config.stats.seed = s;
            if let ClassifierMode::Train { grid, .. } = &mut config.classifier {
                grid.seed = s;
            }
        }
        if let Some(out) = &overrides.out {
            config.outputs = std::path::absolute(out).map_err(|e| CliError::config(e.to_string()))?;
        }
        if let Some(ws) = workspace_env {
            config.workspace = std::path::absolute(ws).map_err(|e| CliError::config(e.to_string()))?;
        }
        let resolved = Self { config, base };
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn require_file(&self, what: &str, p: &Path) -> Result<()> {
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(CliError::config(format!("{what} file {} not found", full.display())));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        self.require_file("posts", &c.posts)?;
        self.require_file("lexicon", &c.lexicon)?;
        if let Some(t) = &c.negation_triggers {
            self.require_file("negation trigger", t)?;
        }
        if let Some(g) = &c.gold {
            self.require_file("gold", g)?;
        }
        self.keyword_config()?;
        c.features.validate().map_err(|e| CliError::config(e.to_string()))?;
        c.matcher.validate().map_err(|e| CliError::config(e.to_string()))?;
        c.stats.validate().map_err(|e| CliError::config(e.to_string()))?;
        if c.annotators_per_task < 1 {
            return Err(CliError::config("annotators_per_task must be at least 1"));
        }
        match &c.classifier {
            ClassifierMode::ExternalLabels { labels } => match labels {
                Some(l) => self.require_file("labels", l)?,
                None => return Err(CliError::config("classifier mode external_labels needs a labels file")),
            },
            ClassifierMode::Train {
                training_labels,
                model,
                grid,
            } => {
                match (training_labels, model) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::config("train mode takes training_labels or model, not both"))
                    }
                    (None, None) => return Err(CliError::config("train mode needs training_labels or model")),
                    (Some(t), None) => self.require_file("training labels", t)?,
                    (None, Some(m)) => self.require_file("model", m)?,
                }
                grid.validate().map_err(|e| CliError::config(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn keyword_config(&self) -> Result<KeywordFilterConfig> {
        KeywordFilterConfig::new(self.config.keywords.clone(), self.config.include_hashtag_forms)
            .map_err(|e| CliError::config(e.to_string()))
    }

    pub fn outputs(&self) -> PathBuf {
        self.resolve(&self.config.outputs)
    }

    pub fn workspace(&self) -> PathBuf {
        self.resolve(&self.config.workspace)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.outputs().join(stage)
    }

    /// Path relative to the config directory when it lies below it, so
    /// manifests do not depend on where the project is checked out.
    pub fn display_path(&self, p: &Path) -> String {
        let out = self.outputs();
        if let Ok(rel) = p.strip_prefix(&out) {
            return rel.to_string_lossy().replace('\\', "/");
        }
        match p.strip_prefix(&self.base) {
            Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
            Err(_) => p.to_string_lossy().into_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn base_json(classifier: &str) -> String {
        format!(r#"{{"posts":"posts.jsonl","lexicon":"lexicon.json","classifier":{classifier}}}"#)
    }

    #[test]
    fn external_labels_mode_needs_labels() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "posts.jsonl", "");
        write(dir.path(), "lexicon.json", "{}");
        write(dir.path(), "c.json", &base_json(r#"{"mode":"external_labels"}"#));
        let err = ResolvedConfig::load(&dir.path().join("c.json"), &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        write(dir.path(), "labels.jsonl", "");
        write(dir.path(), "c.json", &base_json(r#"{"mode":"external_labels","labels":"labels.jsonl"}"#));
        assert!(ResolvedConfig::load(&dir.path().join("c.json"), &Overrides::default()).is_ok());
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "c.json", &base_json(r#"{"mode":"external_labels","labels":"l.jsonl"}"#));
        let err = ResolvedConfig::load(&dir.path().join("c.json"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("posts"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn overrides_apply() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "posts.jsonl", "");
        write(dir.path(), "lexicon.json", "{}");
        write(dir.path(), "t.jsonl", "");
        write(dir.path(), "c.json", &base_json(r#"{"mode":"train","training_labels":"t.jsonl"}"#));
        let o = Overrides {
            threshold: Some(0.9),
            alpha: Some(0.01),
            seed: Some(5),
            out: Some(dir.path().join("elsewhere")),
        };
        let r = ResolvedConfig::load(&dir.path().join("c.json"), &o).unwrap();
        assert_eq!(r.config.matcher.similarity_threshold, 0.9);
        assert_eq!(r.config.stats.alpha, 0.01);
        match &r.config.classifier {
            ClassifierMode::Train { grid, .. } => assert_eq!(grid.seed, 5),
            _ => unreachable!(),
        }
        assert_eq!(r.outputs(), dir.path().join("elsewhere"));
        let bad = Overrides {
            threshold: Some(1.5),
            ..Default::default()
        };
        assert_eq!(ResolvedConfig::load(&dir.path().join("c.json"), &bad).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "posts.jsonl", "");
        write(dir.path(), "lexicon.json", "{}");
        write(
            dir.path(),
            "c.json",
            r#"{"posts":"posts.jsonl","lexicon":"lexicon.json","classifier":{"mode":"external_labels","labels":"posts.jsonl"},"thresold":0.9}"#,
        );
        assert!(ResolvedConfig::load(&dir.path().join("c.json"), &Overrides::default()).is_err());
    }
}
