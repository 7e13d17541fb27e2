//! Pipeline configuration, loaded from TOML or JSON by file extension.
//!
//! Every section rejects unknown keys and every field has a default, so an
//! empty file is a valid configuration.

use crate::dataset::CurriculumKey;
use crate::generate::SamplingParams;
use crate::prompt::Sentinels;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub segment: SegmentConfig,
    pub sentinels: Sentinels,
    pub sampling: SamplingParams,
    pub backend: BackendConfig,
    pub exec: ExecConfig,
    pub dataset: DatasetConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            segment: SegmentConfig::default(),
            sentinels: Sentinels::default(),
            sampling: SamplingParams::default(),
            backend: BackendConfig::default(),
            exec: ExecConfig::default(),
            dataset: DatasetConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GoldenPolicy {
    /// The first solution, unexecuted.
    First,
    /// The first solution that passes every test.
    #[default]
    FirstPassing,
    /// Every solution that passes every test.
    AllPassing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub root: PathBuf,
    pub limit: Option<usize>,
    /// Shell command that reads source on stdin and writes formatted source.
    pub formatter_cmd: Option<String>,
    pub golden: GoldenPolicy,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/apps/train"),
            limit: None,
            formatter_cmd: None,
            golden: GoldenPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub max_blocks_per_solution: Option<usize>,
    pub include_whole_program: bool,
    /// Replaces block segmentation by one random line span per solution.
    pub random_span_seed: Option<u64>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            max_blocks_per_solution: None,
            include_whole_program: true,
            random_span_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub request_timeout_s: f64,
    pub workers: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            base_url: None,
            model: None,
            max_retries: 3,
            backoff_ms: 500,
            request_timeout_s: 120.0,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecConfig {
    /// Runner command line; the job is written to its stdin.
    pub runner: Vec<String>,
    pub timeout_s: f64,
    pub memory_mb: Option<u64>,
    pub workers: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            runner: vec!["fimforge-runner".into()],
            timeout_s: 10.0,
            memory_mb: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub alpha: f64,
    pub curriculum_key: CurriculumKey,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            curriculum_key: CurriculumKey::Lines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported config extension (expected .toml or .json)")]
    Extension { path: PathBuf },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?,
            _ => {
                return Err(ConfigError::Extension {
                    path: path.to_path_buf(),
                })
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.sentinels.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sampling.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.dataset.alpha) {
            return invalid(format!("dataset.alpha must lie in [0, 1], got {}", self.dataset.alpha));
        }
        if !(self.exec.timeout_s > 0.0) {
            return invalid(format!("exec.timeout_s must be positive, got {}", self.exec.timeout_s));
        }
        if self.exec.runner.is_empty() {
            return invalid("exec.runner must name a command".into());
        }
        if self.exec.workers == 0 || self.backend.workers == 0 {
            return invalid("worker counts must be at least 1".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.base_url.is_none() {
            return invalid("backend.base_url is required for the http backend".into());
        }
        if self.segment.max_blocks_per_solution == Some(0) {
            return invalid("segment.max_blocks_per_solution must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_files_give_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let a = PipelineConfig::from_path(&write(dir.path(), "a.toml", "")).unwrap();
        let b = PipelineConfig::from_path(&write(dir.path(), "b.json", "{}")).unwrap();
        assert_eq!(a, PipelineConfig::default());
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.dataset.alpha, 0.5);
        assert_eq!(a.exec.timeout_s, 10.0);
    }

    #[test]
    fn sections_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
seed = 7
[dataset]
alpha = 1.0
curriculum_key = "depth"
[sampling]
n = 8
[exec]
runner = ["python3", "runner.py"]
"#;
        let cfg = PipelineConfig::from_path(&write(dir.path(), "c.toml", text)).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dataset.curriculum_key, CurriculumKey::Depth);
        assert_eq!(cfg.sampling.n, 8);
        assert_eq!(cfg.sampling.temperature, 0.7);
        assert_eq!(cfg.exec.runner, ["python3", "runner.py"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in [
            ("a.toml", "[dataset]\nalhpa = 0.3\n"),
            ("b.toml", "[nonsense]\n"),
            ("c.json", r#"{"exec": {"timeout": 3}}"#),
        ] {
            assert!(matches!(
                PipelineConfig::from_path(&write(dir.path(), name, text)),
                Err(ConfigError::Parse { .. })
            ));
        }
        assert!(matches!(
            PipelineConfig::from_path(&write(dir.path(), "d.yaml", "")),
            Err(ConfigError::Extension { .. })
        ));
    }

    #[test]
    fn validation() {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.backend.kind = BackendKind::Http;
        assert!(cfg.validate().is_err());
        cfg.backend.base_url = Some("http://localhost:8000/v1".into());
        cfg.validate().unwrap();
    }
}
