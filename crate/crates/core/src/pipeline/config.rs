use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::HdbscanParams;
use crate::evaluate::NmiNormalization;
use crate::rank::RankingWeights;
use crate::reduce::{ReducerChoice, ReducerParams};
use crate::review::InputFormat;
use crate::summarize::TokenBudget;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("no input file configured")]
    NoInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatBackend {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<InputFormat>,
    pub default_language: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: None,
            default_language: "en".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub chat: ChatBackend,
    pub embedding: EmbeddingBackend,
    pub mock_script: Option<PathBuf>,
    pub chat_endpoint: String,
    pub chat_model: String,
    pub embedding_endpoint: String,
    pub embedding_model: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            chat: ChatBackend::Remote,
            embedding: EmbeddingBackend::Remote,
            mock_script: None,
            chat_endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            chat_model: "gpt-3.5-turbo".to_string(),
            embedding_endpoint: "http://localhost:8080/v1/embeddings".to_string(),
            embedding_model: "hkunlp/instructor-large".to_string(),
            max_in_flight: crate::gateway::DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReduceConfig {
    pub method: ReducerChoice,
    pub out_dim: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        let p = ReducerParams::default();
        Self {
            method: ReducerChoice::Umap,
            out_dim: p.out_dim,
            n_neighbors: p.n_neighbors,
            min_dist: p.min_dist,
            n_epochs: p.n_epochs,
        }
    }
}

impl ReduceConfig {
    pub fn params(&self, seed: u64) -> ReducerParams {
        ReducerParams {
            out_dim: self.out_dim,
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            n_epochs: self.n_epochs,
            seed,
            ..ReducerParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub nmi_normalization: NmiNormalization,
    pub min_size: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            nmi_normalization: NmiNormalization::Arithmetic,
            min_size: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from(".reviewmine-cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed for every stochastic stage.
    pub seed: u64,
    pub input: InputConfig,
    pub provider: ProviderConfig,
    pub reduce: ReduceConfig,
    pub cluster: HdbscanParams,
    pub summarize: TokenBudget,
    pub rank: RankingWeights,
    pub evaluate: EvaluateConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            input: InputConfig::default(),
            provider: ProviderConfig::default(),
            reduce: ReduceConfig::default(),
            cluster: HdbscanParams::default(),
            summarize: TokenBudget::default(),
            rank: RankingWeights::default(),
            evaluate: EvaluateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

impl PipelineConfig {
    /// Parses TOML text. Unknown keys and ill-typed values are reported with
    /// their dotted key path.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            if let Some(field) = unknown_field(&msg) {
                let key = if path == "." {
                    field
                } else if path == field || path.ends_with(&format!(".{field}")) {
                    path
                } else {
                    format!("{path}.{field}")
                };
                ConfigError::UnknownKey(key)
            } else if path == "." {
                ConfigError::Syntax(inner.to_string())
            } else {
                invalid(&path, msg)
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cluster.min_cluster_size < 2 {
            return Err(invalid("cluster.min_cluster_size", "must be >= 2"));
        }
        if self.cluster.min_samples == Some(0) {
            return Err(invalid("cluster.min_samples", "must be >= 1"));
        }
        self.reduce
            .params(self.seed)
            .validate()
            .map_err(|e| invalid("reduce", e))?;
        if self.summarize.max_tokens_per_group == 0 {
            return Err(invalid("summarize.max_tokens_per_group", "must be positive"));
        }
        self.summarize.validate().map_err(|e| invalid("summarize.estimator", e))?;
        for (key, w) in [("rank.w_rev", self.rank.w_rev), ("rank.w_th", self.rank.w_th), ("rank.w_ra", self.rank.w_ra)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid(key, "weights must be positive"));
            }
        }
        if self.provider.max_in_flight == 0 {
            return Err(invalid("provider.max_in_flight", "must be positive"));
        }
        if self.evaluate.min_size == 0 {
            return Err(invalid("evaluate.min_size", "must be positive"));
        }
        Ok(())
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.input.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.provider.mock_script.as_mut() {
            fix(p);
        }
        fix(&mut self.output.out_dir);
        fix(&mut self.output.cache_dir);
    }

    pub fn input_path(&self) -> Result<&Path, ConfigError> {
        self.input.path.as_deref().ok_or(ConfigError::NoInput)
    }

    pub fn input_format(&self) -> Result<InputFormat, ConfigError> {
        let path = self.input_path()?;
        self.input
            .format
            .or_else(|| InputFormat::from_path(path))
            .ok_or_else(|| invalid("input.format", "cannot infer the format from the file name"))
    }

    /// Checks that every file the run will read exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let input = self.input_path()?;
        if !input.is_file() {
            return Err(ConfigError::MissingPath {
                what: "input file",
                path: input.to_path_buf(),
            });
        }
        if self.provider.chat == ChatBackend::Mock {
            match &self.provider.mock_script {
                Some(p) if !p.is_file() => {
                    return Err(ConfigError::MissingPath {
                        what: "mock script",
                        path: p.clone(),
                    })
                }
                Some(_) => {}
                None => return Err(invalid("provider.mock_script", "required when provider.chat = \"mock\"")),
            }
        }
        Ok(())
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Loads a config file; relative paths inside it are taken relative to the
/// file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = PipelineConfig::from_toml(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
