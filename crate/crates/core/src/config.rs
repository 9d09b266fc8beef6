//! Run configuration: TOML file, then `NT_*` environment variables, then
//! command-line flags (applied by the caller), each overriding the last.
//!
//! ```toml
//! seed = 7
//! prompt_dir = "prompts/custom"      # optional, overrides built-in prompts
//! repository = "exemplars.jsonl"     # optional, embedded repository file
//!
//! [engine]
//! k = 5
//! window = 10
//! variant = "full"                   # full | no_rag | no_ragrl | role_play
//!
//! [simulation]
//! min_turns = 35
//! opening = "Hi, what would you like to talk about?"
//! cooperation = [{ label = "low", description = "..." }]
//!
//! [backend]
//! provider = "mock"                  # mock | openai
//! request_cap = 8
//! max_retries = 3
//!
//! [backend.http]
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! models = { im_annotation = "gpt-4o-mini" }
//! embedding_model = "text-embedding-3-small"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [params.stage_planning]
//! temperature = 0.3
//! top_p = 1.0
//! frequency_penalty = 0.0
//! presence_penalty = 2.0
//! beam_size = 1
//! max_tokens = 200
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    CallKind, CappedBackend, ChatBackend, GenerationParams, HttpBackend, HttpBackendConfig,
    ParamTable, RetryPolicy, RuleBackend,
};
use crate::clientsim::{default_cooperation_levels, CooperationLevel, DEFAULT_OPENING};
use crate::exemplars::DEFAULT_K;
use crate::orchestrator::{EngineConfig, DEFAULT_MIN_TURNS};
use crate::planner::DEFAULT_HISTORY_WINDOW;
use crate::prompts::{PromptError, PromptSet};
use crate::transcript::Variant;

pub const ENV_SEED: &str = "NT_SEED";
pub const ENV_K: &str = "NT_K";
pub const ENV_HISTORY_WINDOW: &str = "NT_HISTORY_WINDOW";
pub const ENV_MIN_TURNS: &str = "NT_MIN_TURNS";
pub const ENV_VARIANT: &str = "NT_VARIANT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Mock,
    #[serde(alias = "http")]
    OpenAi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub provider: Provider,
    pub request_cap: usize,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub http: HttpBackendConfig,
    /// Embedding dimension of the mock provider.
    pub mock_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Mock,
            request_cap: 8,
            max_retries: 3,
            retry_base_ms: 500,
            http: HttpBackendConfig::default(),
            mock_dim: crate::backend::DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSection {
    pub k: usize,
    pub window: usize,
    pub variant: Variant,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            window: DEFAULT_HISTORY_WINDOW,
            variant: Variant::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub min_turns: usize,
    pub opening: String,
    pub cooperation: Vec<CooperationLevel>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            min_turns: DEFAULT_MIN_TURNS,
            opening: DEFAULT_OPENING.to_string(),
            cooperation: default_cooperation_levels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub prompt_dir: Option<PathBuf>,
    pub repository: Option<PathBuf>,
    pub engine: EngineSection,
    pub simulation: SimulationSection,
    pub backend: BackendConfig,
    pub params: BTreeMap<CallKind, GenerationParams>,
}

fn parse_env<T: std::str::FromStr>(var: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var,
        message: e.to_string(),
    })
}

impl Config {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.prompt_dir, &mut config.repository]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// File (or defaults) with environment overrides applied.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Applies `NT_*` overrides read through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(ENV_SEED) {
            self.seed = parse_env(ENV_SEED, &v)?;
        }
        if let Some(v) = get(ENV_K) {
            self.engine.k = parse_env(ENV_K, &v)?;
        }
        if let Some(v) = get(ENV_HISTORY_WINDOW) {
            self.engine.window = parse_env(ENV_HISTORY_WINDOW, &v)?;
        }
        if let Some(v) = get(ENV_MIN_TURNS) {
            self.simulation.min_turns = parse_env(ENV_MIN_TURNS, &v)?;
        }
        if let Some(v) = get(ENV_VARIANT) {
            self.engine.variant = parse_env(ENV_VARIANT, &v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.engine.k == 0 {
            return Err(ConfigError::Invalid("engine.k must be at least 1".into()));
        }
        if self.simulation.min_turns == 0 {
            return Err(ConfigError::Invalid(
                "simulation.min_turns must be at least 1".into(),
            ));
        }
        if self
            .simulation
            .cooperation
            .iter()
            .any(|c| c.label.trim().is_empty())
        {
            return Err(ConfigError::Invalid(
                "cooperation labels must be non-empty".into(),
            ));
        }
        if self.backend.mock_dim == 0 {
            return Err(ConfigError::Invalid(
                "backend.mock_dim must be positive".into(),
            ));
        }
        self.param_table()?;
        Ok(())
    }

    pub fn param_table(&self) -> Result<ParamTable, ConfigError> {
        self.params
            .iter()
            .try_fold(ParamTable::default(), |table, (&kind, &params)| {
                table
                    .with_override(kind, params)
                    .map_err(|e| ConfigError::Invalid(format!("params.{kind}: {e}")))
            })
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.backend.max_retries,
            base_delay: Duration::from_millis(self.backend.retry_base_ms),
            ..RetryPolicy::default()
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            k: self.engine.k,
            window: self.engine.window,
            variant: self.engine.variant,
        }
    }

    pub fn prompt_set(&self) -> Result<PromptSet, ConfigError> {
        Ok(match &self.prompt_dir {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::builtin(),
        })
    }

    /// The configured provider behind the in-flight request cap.
    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        let cap = self.backend.request_cap;
        Ok(match self.backend.provider {
            Provider::Mock => Arc::new(CappedBackend::new(
                RuleBackend::new(self.seed).with_dim(self.backend.mock_dim),
                cap,
            )),
            Provider::OpenAi => Arc::new(CappedBackend::new(
                HttpBackend::new(
                    self.backend.http.clone(),
                    self.param_table()?,
                    self.retry_policy(),
                ),
                cap,
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.engine.k, 5);
        assert_eq!(c.engine.window, 10);
        assert_eq!(c.simulation.min_turns, 35);
        assert_eq!(c.simulation.cooperation.len(), 3);
        assert_eq!(c.backend.provider, Provider::Mock);
        c.validate().unwrap();
    }

    #[test]
    fn parses_documented_schema() {
        let text = r#"
seed = 7
[engine]
k = 3
variant = "no_rag"
[backend]
provider = "openai"
[backend.http]
model = "m"
models = { im_annotation = "small" }
[params.stage_planning]
temperature = 0.3
top_p = 1.0
frequency_penalty = 0.0
presence_penalty = 2.0
beam_size = 1
max_tokens = 100
"#;
        let c = Config::from_toml_str(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.engine.k, 3);
        assert_eq!(c.engine.window, 10);
        assert_eq!(c.engine.variant, Variant::NoRag);
        assert_eq!(c.backend.provider, Provider::OpenAi);
        assert_eq!(c.backend.http.model_for(CallKind::ImAnnotation), "small");
        assert_eq!(c.backend.http.model_for(CallKind::StagePlanning), "m");
        let table = c.param_table().unwrap();
        assert_eq!(table.get(CallKind::StagePlanning).temperature, 0.3);
        assert_eq!(table.get(CallKind::ReflectionPlanning).temperature, 0.5);
    }

    #[test]
    fn env_overrides_file() {
        let mut c = Config::from_toml_str("seed = 1\n[engine]\nk = 2\n", Path::new("x")).unwrap();
        let env: BTreeMap<&str, &str> = [
            (ENV_SEED, "9"),
            (ENV_K, "4"),
            (ENV_VARIANT, "role_play"),
            (ENV_MIN_TURNS, "3"),
        ]
        .into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!((c.seed, c.engine.k, c.simulation.min_turns), (9, 4, 3));
        assert_eq!(c.engine.variant, Variant::RolePlay);
        let bad = |v: &str| {
            let mut c = Config::default();
            c.apply_env(|k| (k == ENV_VARIANT).then(|| v.to_string()))
        };
        assert!(matches!(
            bad("fancy"),
            Err(ConfigError::Env {
                var: ENV_VARIANT,
                ..
            })
        ));
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(Config::from_toml_str("[engine]\nk = 0\n", Path::new("x")).is_err());
        assert!(Config::from_toml_str("bogus = [", Path::new("x")).is_err());
        let bad_params = "[params.response_generation]\ntemperature = 0.8\ntop_p = 0.0\nfrequency_penalty = 0.0\npresence_penalty = 0.0\nbeam_size = 1\nmax_tokens = 10\n";
        assert!(matches!(
            Config::from_toml_str(bad_params, Path::new("x")),
            Err(ConfigError::Invalid(_))
        ));
    }
}
