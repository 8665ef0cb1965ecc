//! Pipeline configuration: one TOML file describing the store, the corpus,
//! the model fleet, the judge, and the routing policy.
//!
//! A model entry is either HTTP-backed (`base_url`, optionally
//! `api_key_env`) or scripted (`[models.scripted]` with a deterministic
//! behavior) — exactly one of the two. Scripted entries make whole
//! pipelines runnable offline, which the test suites lean on heavily.

use crate::backend::http::HttpBackend;
use crate::backend::scripted::{ScriptedBackend, ScriptedBehavior};
use crate::backend::{BackendConfig, ChatBackend};
use crate::grade::Grade;
use crate::prompt::{PromptError, TemplateSet};
use crate::registry::Registry;
use crate::reportcard::{CardVariant, DatasetCatalog};
use crate::router::{Ladder, RouterError};
use crate::types::{default_token_cap, ModelRef, PredictionMode};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("model id {0:?} appears more than once")]
    DuplicateModel(String),
    #[error("judge model {0:?} is not in the [[models]] list")]
    UnknownJudge(String),
    #[error("model {id:?}: {detail}")]
    Model { id: String, detail: String },
    #[error("split_ratio must be strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error(transparent)]
    Ladder(#[from] RouterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn default_threshold() -> Grade {
    Grade::Ok
}

fn default_card_variant() -> CardVariant {
    CardVariant::Long
}

fn default_prediction_mode() -> PredictionMode {
    PredictionMode::ZeroShot
}

fn default_split_seed() -> u64 {
    crate::corpus::DEFAULT_SPLIT_SEED
}

fn default_split_ratio() -> f64 {
    crate::corpus::DEFAULT_SPLIT_RATIO
}

fn default_parallelism() -> usize {
    4
}

fn default_rubric() -> String {
    "rubric".to_string()
}

fn default_live_dataset() -> String {
    "live".to_string()
}

fn default_temperature() -> f64 {
    0.0
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    2
}

fn default_routed() -> bool {
    true
}

/// One model in the fleet.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    /// Shown on report cards; defaults to the id.
    pub display_name: Option<String>,
    /// Position on the routing ladder; lower is cheaper. Must be unique
    /// among routed models.
    pub cost_rank: u32,
    #[serde(default)]
    pub is_reasoning: bool,
    /// Hard output cap. Defaults by kind (reasoning models get the larger
    /// budget).
    pub max_output_tokens: Option<u32>,
    /// HTTP backend: where to send chat requests.
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token, if the service
    /// needs one.
    pub api_key_env: Option<String>,
    /// Offline backend: a deterministic scripted behavior instead of an
    /// HTTP service.
    pub scripted: Option<ScriptedBehavior>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Per-request output budget; defaults to the model's cap.
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Whether the model sits on the routing ladder. Judges are typically
    /// configured with `routed = false`.
    #[serde(default = "default_routed")]
    pub routed: bool,
}

impl ModelEntry {
    pub fn model_ref(&self) -> ModelRef {
        let mut m = ModelRef::new(&self.id, self.cost_rank, self.is_reasoning);
        if let Some(name) = &self.display_name {
            m.display_name = name.clone();
        }
        if let Some(cap) = self.max_output_tokens {
            m.max_output_tokens = cap;
        }
        m
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    /// Which [[models]] entry grades responses.
    pub model: String,
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Append-only record store (JSONL).
    pub store: PathBuf,
    /// Query corpus (JSONL). Optional: routing-only deployments have no
    /// corpus.
    pub corpus: Option<PathBuf>,
    /// Prompt template directory; the built-in set is used when absent.
    pub template_dir: Option<PathBuf>,
    /// Routing acceptance threshold.
    #[serde(default = "default_threshold")]
    pub threshold: Grade,
    /// Which report-card rendering contextual prediction feeds on.
    #[serde(default = "default_card_variant")]
    pub card_variant: CardVariant,
    /// Prediction strategy used by the router.
    #[serde(default = "default_prediction_mode")]
    pub prediction_mode: PredictionMode,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    /// How many response collections run concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Template id of the grading rubric.
    #[serde(default = "default_rubric")]
    pub rubric: String,
    /// Dataset label stamped on routed live queries.
    #[serde(default = "default_live_dataset")]
    pub live_dataset: String,
    pub judge: JudgeConfig,
    pub models: Vec<ModelEntry>,
    /// Dataset descriptions for long report cards, by dataset id.
    #[serde(default)]
    pub datasets: BTreeMap<String, String>,
}

impl PipelineConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Parses a TOML string; `origin` names it in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|source| ConfigError::Parse {
                path: origin.to_string(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(ConfigError::BadRatio(self.split_ratio));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::ZeroParallelism);
        }
        if self.threshold == Grade::Bad {
            return Err(RouterError::BadThreshold(self.threshold).into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.models {
            if entry.id.trim().is_empty() {
                return Err(ConfigError::Model {
                    id: entry.id.clone(),
                    detail: "model id must not be empty".into(),
                });
            }
            if !seen.insert(entry.id.clone()) {
                return Err(ConfigError::DuplicateModel(entry.id.clone()));
            }
            match (&entry.base_url, &entry.scripted) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::Model {
                        id: entry.id.clone(),
                        detail: "configure either base_url or scripted, not both".into(),
                    });
                }
                (None, None) => {
                    return Err(ConfigError::Model {
                        id: entry.id.clone(),
                        detail: "needs a backend: set base_url or scripted".into(),
                    });
                }
                _ => {}
            }
            let cap = entry
                .max_output_tokens
                .unwrap_or_else(|| default_token_cap(entry.is_reasoning));
            if cap == 0 {
                return Err(ConfigError::Model {
                    id: entry.id.clone(),
                    detail: "max_output_tokens must be positive".into(),
                });
            }
            if let Some(budget) = entry.max_tokens {
                if budget == 0 || budget > cap {
                    return Err(ConfigError::Model {
                        id: entry.id.clone(),
                        detail: format!("max_tokens {budget} outside (0, {cap}]"),
                    });
                }
            }
        }
        if !seen.contains(&self.judge.model) {
            return Err(ConfigError::UnknownJudge(self.judge.model.clone()));
        }
        // Routed ranks must already be unambiguous; Ladder::new re-checks
        // at build time, but failing at load keeps the error close to the
        // config file.
        let mut routed: Vec<&ModelEntry> = self.models.iter().filter(|m| m.routed).collect();
        routed.sort_by_key(|m| m.cost_rank);
        for pair in routed.windows(2) {
            if pair[0].cost_rank == pair[1].cost_rank {
                return Err(RouterError::DuplicateCostRank {
                    rank: pair[0].cost_rank,
                    first: pair[0].id.clone(),
                    second: pair[1].id.clone(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// All configured models, in file order.
    pub fn model_refs(&self) -> Vec<ModelRef> {
        self.models.iter().map(ModelEntry::model_ref).collect()
    }

    /// Models that sit on the routing ladder.
    pub fn routed_refs(&self) -> Vec<ModelRef> {
        self.models
            .iter()
            .filter(|m| m.routed)
            .map(ModelEntry::model_ref)
            .collect()
    }

    /// The entry for one model id.
    pub fn model(&self, id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Builds one backend per model (scripted or HTTP as configured).
    pub fn backends(&self) -> Result<Registry<dyn ChatBackend>, ConfigError> {
        let mut registry: Registry<dyn ChatBackend> = Registry::new("backend");
        for entry in &self.models {
            let backend: Arc<dyn ChatBackend> = match &entry.scripted {
                Some(behavior) => {
                    Arc::new(ScriptedBackend::new(&entry.id, behavior.clone()))
                }
                None => {
                    let base_url = entry
                        .base_url
                        .clone()
                        .expect("validated: base_url xor scripted");
                    let mut backend_config =
                        BackendConfig::new(entry.model_ref(), base_url);
                    backend_config.api_key_env = entry.api_key_env.clone();
                    backend_config.timeout = Duration::from_secs(entry.timeout_secs);
                    backend_config.max_retries = entry.max_retries;
                    backend_config.temperature = entry.temperature;
                    if let Some(budget) = entry.max_tokens {
                        backend_config.max_tokens = budget;
                    }
                    Arc::new(HttpBackend::new(backend_config).map_err(|e| {
                        ConfigError::Model {
                            id: entry.id.clone(),
                            detail: e.to_string(),
                        }
                    })?)
                }
            };
            registry
                .register(&entry.id, backend)
                .expect("validated: unique model ids");
        }
        Ok(registry)
    }

    /// The routing ladder over routed models at the configured threshold.
    pub fn ladder(&self) -> Result<Ladder, ConfigError> {
        Ok(Ladder::new(self.routed_refs(), self.threshold)?)
    }

    /// Loads the configured template directory, or the built-in set.
    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.template_dir {
            Some(dir) => Ok(TemplateSet::load_dir(dir)?),
            None => Ok(TemplateSet::builtin()?),
        }
    }

    /// Dataset catalog with any configured description overrides.
    pub fn catalog(&self) -> DatasetCatalog {
        DatasetCatalog::with_overrides(self.datasets.clone())
    }
}
