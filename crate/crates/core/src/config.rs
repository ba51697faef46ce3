//! Flat `key = value` configuration with dotted keys.
//!
//! ```text
//! # comment
//! kg.path = data/kg.tsv
//! embedding.kind = mock
//! matcher.strategy = heuristic
//! matcher.top_k = 16
//! ```
//!
//! Values may be wrapped in double quotes. Relative paths are resolved
//! against the directory of the config file. Environment variables of the
//! form `KARPA_SECTION__KEY` override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::digest::sha256_hex;
use crate::kg::Direction;
use crate::matcher::{MatchConfig, Strategy};
use crate::planner::PlannerConfig;
use crate::retry::RetryPolicy;

pub const CONFIG_ENV: &str = "KARPA_CONFIG";
pub const LLM_API_KEY_ENV: &str = "KARPA_LLM_API_KEY";
pub const EMBED_API_KEY_ENV: &str = "KARPA_EMBED_API_KEY";
const ENV_PREFIX: &str = "KARPA_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: {reason}")]
    Invalid { origin: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

fn invalid(origin: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { origin: origin.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingKind {
    #[default]
    Mock,
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LlmKind {
    Http,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSettings {
    pub kind: EmbeddingKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub dim: usize,
    pub cache: Option<PathBuf>,
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_output: Option<u32>,
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub concurrency: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptPaths {
    pub initial_planning: Option<PathBuf>,
    pub replanning: Option<PathBuf>,
    pub reasoning: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kg_path: Option<PathBuf>,
    pub embedding: EmbeddingSettings,
    pub llm: LlmSettings,
    pub matcher: MatchConfig,
    pub planner: PlannerConfig,
    pub batch_limit: usize,
    pub eval: EvalSettings,
    pub prompts: PromptPaths,
    pub retry: RetryPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kg_path: None,
            embedding: EmbeddingSettings {
                kind: EmbeddingKind::Mock,
                endpoint: None,
                model: String::new(),
                dim: 256,
                cache: None,
                fixture: None,
            },
            llm: LlmSettings {
                kind: LlmKind::Scripted,
                endpoint: None,
                model: String::new(),
                temperature: 0.0,
                max_output: None,
                fixture: None,
            },
            matcher: MatchConfig::default(),
            planner: PlannerConfig::default(),
            batch_limit: 8,
            eval: EvalSettings { mode: EvalMode::Lenient, concurrency: 1, checkpoint_dir: None },
            prompts: PromptPaths::default(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "kg.path",
    "embedding.kind",
    "embedding.endpoint",
    "embedding.model",
    "embedding.dim",
    "embedding.cache",
    "embedding.fixture",
    "llm.kind",
    "llm.endpoint",
    "llm.model",
    "llm.temperature",
    "llm.max_output",
    "llm.fixture",
    "matcher.strategy",
    "matcher.top_k",
    "matcher.beam_width",
    "matcher.max_len",
    "matcher.frontier_cap",
    "matcher.exact_mode",
    "matcher.direction",
    "planner.relation_cap",
    "planner.per_relation_k",
    "planner.max_path_len",
    "reasoner.batch_limit",
    "eval.mode",
    "eval.concurrency",
    "eval.checkpoint_dir",
    "prompts.initial_planning",
    "prompts.replanning",
    "prompts.reasoning",
    "retry.attempts",
    "retry.base_delay_ms",
];

/// Keys that change how a run executes but not what it computes.
const DIGEST_EXCLUDED: &[&str] = &["eval.concurrency", "eval.checkpoint_dir", "embedding.cache"];

/// `key = value` pairs with 1-based line numbers; comments and blank lines
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let origin = format!("line {}", i + 1);
        let (key, value) = line.split_once('=').ok_or_else(|| invalid(&origin, "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(invalid(&origin, format!("unknown key `{key}`")));
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(invalid(&origin, format!("duplicate key `{key}`")));
        }
        out.push((i + 1, key.to_owned(), unquote(value.trim()).to_owned()));
    }
    Ok(out)
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// `KARPA_MATCHER__TOP_K` → `matcher.top_k`. Variables without `__` are not
/// overrides.
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix(ENV_PREFIX)?;
    let (section, key) = rest.split_once("__")?;
    Some(format!("{}.{}", section.to_ascii_lowercase(), key.to_ascii_lowercase()))
}

fn parse_num<T: FromStr>(origin: &str, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| invalid(origin, format!("`{key}` expects a number, got `{v}`")))
}

fn parse_bool(origin: &str, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(origin, format!("`{key}` expects true or false, got `{v}`"))),
    }
}

fn optional(v: &str) -> Option<&str> {
    (!v.is_empty() && !v.eq_ignore_ascii_case("none")).then_some(v)
}

impl PipelineConfig {
    /// Parses `text`; relative paths resolve against `base_dir`.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_pairs(text)? {
            cfg.set(&format!("line {line}"), &key, &value, base_dir)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base).map_err(|e| match e {
            ConfigError::Invalid { origin, reason } => invalid(format!("{}: {origin}", path.display()), reason),
            other => other,
        })
    }

    /// Applies `KARPA_SECTION__KEY` variables; relative paths resolve against
    /// `base_dir`.
    pub fn apply_env<I, K, V>(&mut self, vars: I, base_dir: &Path) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut overrides: Vec<(String, String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| env_key(k.as_ref()).map(|key| (k.as_ref().to_owned(), key, v.as_ref().to_owned())))
            .collect();
        overrides.sort();
        for (var, key, value) in overrides {
            if !KEYS.contains(&key.as_str()) {
                return Err(invalid(var, format!("unknown key `{key}`")));
            }
            self.set(&var, &key, &value, base_dir)?;
        }
        Ok(())
    }

    pub fn set(&mut self, origin: &str, key: &str, value: &str, base_dir: &Path) -> Result<(), ConfigError> {
        let path = |v: &str| optional(v).map(|p| base_dir.join(p));
        let string = |v: &str| optional(v).map(str::to_owned);
        match key {
            "kg.path" => self.kg_path = path(value),
            "embedding.kind" => {
                self.embedding.kind = match value {
                    "mock" => EmbeddingKind::Mock,
                    "http" => EmbeddingKind::Http,
                    "scripted" => EmbeddingKind::Scripted,
                    _ => {
                        return Err(invalid(
                            origin,
                            format!("embedding.kind must be mock, http or scripted, got `{value}`"),
                        ))
                    }
                }
            }
            "embedding.endpoint" => self.embedding.endpoint = string(value),
            "embedding.model" => self.embedding.model = value.to_owned(),
            "embedding.dim" => self.embedding.dim = parse_num(origin, key, value)?,
            "embedding.cache" => self.embedding.cache = path(value),
            "embedding.fixture" => self.embedding.fixture = path(value),
            "llm.kind" => {
                self.llm.kind = match value {
                    "http" => LlmKind::Http,
                    "scripted" => LlmKind::Scripted,
                    _ => return Err(invalid(origin, format!("llm.kind must be http or scripted, got `{value}`"))),
                }
            }
            "llm.endpoint" => self.llm.endpoint = string(value),
            "llm.model" => self.llm.model = value.to_owned(),
            "llm.temperature" => self.llm.temperature = parse_num(origin, key, value)?,
            "llm.max_output" => self.llm.max_output = optional(value).map(|v| parse_num(origin, key, v)).transpose()?,
            "llm.fixture" => self.llm.fixture = path(value),
            "matcher.strategy" => self.matcher.strategy = value.parse::<Strategy>().map_err(|e| invalid(origin, e))?,
            "matcher.top_k" => self.matcher.top_k = parse_num(origin, key, value)?,
            "matcher.beam_width" => self.matcher.beam_width = parse_num(origin, key, value)?,
            "matcher.max_len" => {
                self.matcher.max_len = optional(value).map(|v| parse_num(origin, key, v)).transpose()?
            }
            "matcher.frontier_cap" => self.matcher.frontier_cap = parse_num(origin, key, value)?,
            "matcher.exact_mode" => self.matcher.exact_mode = parse_bool(origin, key, value)?,
            "matcher.direction" => {
                self.matcher.direction = match value {
                    "forward" => Direction::Forward,
                    "inverse" => Direction::Inverse,
                    "both" => Direction::Both,
                    _ => {
                        return Err(invalid(
                            origin,
                            format!("matcher.direction must be forward, inverse or both, got `{value}`"),
                        ))
                    }
                }
            }
            "planner.relation_cap" => self.planner.relation_cap = parse_num(origin, key, value)?,
            "planner.per_relation_k" => {
                self.planner.per_relation_k = optional(value).map(|v| parse_num(origin, key, v)).transpose()?
            }
            "planner.max_path_len" => self.planner.max_path_len = parse_num(origin, key, value)?,
            "reasoner.batch_limit" => self.batch_limit = parse_num(origin, key, value)?,
            "eval.mode" => {
                self.eval.mode = match value {
                    "strict" => EvalMode::Strict,
                    "lenient" => EvalMode::Lenient,
                    _ => return Err(invalid(origin, format!("eval.mode must be strict or lenient, got `{value}`"))),
                }
            }
            "eval.concurrency" => self.eval.concurrency = parse_num(origin, key, value)?,
            "eval.checkpoint_dir" => self.eval.checkpoint_dir = path(value),
            "prompts.initial_planning" => self.prompts.initial_planning = path(value),
            "prompts.replanning" => self.prompts.replanning = path(value),
            "prompts.reasoning" => self.prompts.reasoning = path(value),
            "retry.attempts" => self.retry.attempts = parse_num(origin, key, value)?,
            "retry.base_delay_ms" => self.retry.base_delay = Duration::from_millis(parse_num(origin, key, value)?),
            other => return Err(invalid(origin, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of every key as text.
    pub fn values(&self) -> BTreeMap<&'static str, String> {
        let p = |v: &Option<PathBuf>| v.as_ref().map_or_else(|| "none".to_owned(), |p| p.display().to_string());
        let o = |v: Option<String>| v.unwrap_or_else(|| "none".to_owned());
        let m = &self.matcher;
        let mut out = BTreeMap::new();
        for &key in KEYS {
            let v = match key {
                "kg.path" => p(&self.kg_path),
                "embedding.kind" => format!("{:?}", self.embedding.kind).to_lowercase(),
                "embedding.endpoint" => o(self.embedding.endpoint.clone()),
                "embedding.model" => self.embedding.model.clone(),
                "embedding.dim" => self.embedding.dim.to_string(),
                "embedding.cache" => p(&self.embedding.cache),
                "embedding.fixture" => p(&self.embedding.fixture),
                "llm.kind" => format!("{:?}", self.llm.kind).to_lowercase(),
                "llm.endpoint" => o(self.llm.endpoint.clone()),
                "llm.model" => self.llm.model.clone(),
                "llm.temperature" => self.llm.temperature.to_string(),
                "llm.max_output" => o(self.llm.max_output.map(|v| v.to_string())),
                "llm.fixture" => p(&self.llm.fixture),
                "matcher.strategy" => m.strategy.to_string(),
                "matcher.top_k" => m.top_k.to_string(),
                "matcher.beam_width" => m.beam_width.to_string(),
                "matcher.max_len" => o(m.max_len.map(|v| v.to_string())),
                "matcher.frontier_cap" => m.frontier_cap.to_string(),
                "matcher.exact_mode" => m.exact_mode.to_string(),
                "matcher.direction" => format!("{:?}", m.direction).to_lowercase(),
                "planner.relation_cap" => self.planner.relation_cap.to_string(),
                "planner.per_relation_k" => o(self.planner.per_relation_k.map(|v| v.to_string())),
                "planner.max_path_len" => self.planner.max_path_len.to_string(),
                "reasoner.batch_limit" => self.batch_limit.to_string(),
                "eval.mode" => format!("{:?}", self.eval.mode).to_lowercase(),
                "eval.concurrency" => self.eval.concurrency.to_string(),
                "eval.checkpoint_dir" => p(&self.eval.checkpoint_dir),
                "prompts.initial_planning" => p(&self.prompts.initial_planning),
                "prompts.replanning" => p(&self.prompts.replanning),
                "prompts.reasoning" => p(&self.prompts.reasoning),
                "retry.attempts" => self.retry.attempts.to_string(),
                "retry.base_delay_ms" => self.retry.base_delay.as_millis().to_string(),
                _ => unreachable!("every key is rendered"),
            };
            out.insert(key, v);
        }
        out
    }

    /// SHA-256 over the canonical rendering of every key that affects results.
    /// Paths contribute their file name only, so moving a setup keeps its digest.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for (key, value) in self.values() {
            if DIGEST_EXCLUDED.contains(&key) {
                continue;
            }
            let value = if is_path_key(key) {
                Path::new(&value).file_name().map_or(value.clone(), |f| f.to_string_lossy().into_owned())
            } else {
                value
            };
            text.push_str(&format!("{key} = {value}\n"));
        }
        sha256_hex(text)
    }

    /// Checks value ranges and that referenced files exist.
    /// Checks everything the graph, embeddings and matcher need.
    pub fn validate_retrieval(&self) -> Result<(), ConfigError> {
        self.matcher.validate().map_err(|e| invalid("matcher", e.to_string()))?;
        match &self.kg_path {
            None => return Err(invalid("kg.path", "is required")),
            p => must_exist("kg.path", p)?,
        }
        match self.embedding.kind {
            EmbeddingKind::Http if self.embedding.endpoint.is_none() => {
                return Err(invalid("embedding.endpoint", "is required for http embeddings"))
            }
            EmbeddingKind::Scripted if self.embedding.fixture.is_none() => {
                return Err(invalid("embedding.fixture", "is required for scripted embeddings"))
            }
            _ => {}
        }
        must_exist("embedding.fixture", &self.embedding.fixture)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_retrieval()?;
        let positive = [
            ("reasoner.batch_limit", self.batch_limit),
            ("planner.relation_cap", self.planner.relation_cap),
            ("planner.max_path_len", self.planner.max_path_len),
            ("eval.concurrency", self.eval.concurrency),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(invalid("llm.temperature", "must be within [0, 2]"));
        }
        match self.llm.kind {
            LlmKind::Http if self.llm.endpoint.is_none() => {
                return Err(invalid("llm.endpoint", "is required for an http llm"))
            }
            LlmKind::Scripted if self.llm.fixture.is_none() => {
                return Err(invalid("llm.fixture", "is required for a scripted llm"))
            }
            _ => {}
        }
        must_exist("llm.fixture", &self.llm.fixture)?;
        must_exist("prompts.initial_planning", &self.prompts.initial_planning)?;
        must_exist("prompts.replanning", &self.prompts.replanning)?;
        must_exist("prompts.reasoning", &self.prompts.reasoning)?;
        Ok(())
    }
}

fn must_exist(key: &str, p: &Option<PathBuf>) -> Result<(), ConfigError> {
    match p {
        Some(p) if !p.exists() => Err(invalid(key, format!("{} does not exist", p.display()))),
        _ => Ok(()),
    }
}

fn is_path_key(key: &str) -> bool {
    matches!(key, "kg.path" | "embedding.fixture" | "llm.fixture") || key.starts_with("prompts.")
}
