use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use locmap::gateway::{ChatSettings, DomainProfile, DEFAULT_CONTEXT_TOKENS};
use locmap::model::LocationKind;
use locmap::similarity::{Measure, SimilarityConfig, HOLOCAUST_RELATED};
use locmap::viz::VizFormat;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub map: MapConfig,
    pub similarity: SimilaritySection,
    pub transitions: TransitionsConfig,
    pub viz: VizConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            model: ModelConfig::default(),
            map: MapConfig::default(),
            similarity: SimilaritySection::default(),
            transitions: TransitionsConfig::default(),
            viz: VizConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub endpoint: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the API token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub concurrency: usize,
    pub context_tokens: usize,
    pub timeout_secs: u64,
    /// Fresh responses are stored here and served again on later runs.
    pub cache_dir: Option<PathBuf>,
    /// Serve responses only from this store; never contact a model.
    pub replay_dir: Option<PathBuf>,
    /// JSON list of canned-response rules used instead of a live endpoint.
    pub script: Option<PathBuf>,
    pub profile: String,
    pub prompt_dir: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let chat = ChatSettings::default();
        Self {
            endpoint: None,
            model_id: chat.model_id,
            api_key_env: "LOCMAP_API_KEY".into(),
            temperature: chat.temperature,
            max_output_tokens: chat.max_output_tokens,
            concurrency: 4,
            context_tokens: DEFAULT_CONTEXT_TOKENS,
            timeout_secs: 600,
            cache_dir: None,
            replay_dir: None,
            script: None,
            profile: "holocaust".into(),
            prompt_dir: None,
        }
    }
}

impl ModelConfig {
    pub fn chat_settings(&self) -> ChatSettings {
        ChatSettings {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub overrides: Option<PathBuf>,
    pub drop_same_kind_proximity: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilaritySection {
    pub d_max: Option<f64>,
    pub type_penalty: f64,
    pub graph_cap: Option<f64>,
    pub measure: String,
    pub top_k: usize,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self { d_max: None, type_penalty: 0.5, graph_cap: None, measure: "weighted_edit".into(), top_k: 10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionsConfig {
    pub min_docs: usize,
    /// `none`, `holocaust`, or a comma-separated list of type labels.
    pub filter: String,
}

impl Default for TransitionsConfig {
    fn default() -> Self {
        Self { min_docs: 4, filter: "none".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VizConfig {
    pub min_degree: usize,
    pub format: String,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self { min_degree: 0, format: "dot".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// `deterministic` or `model`.
    pub alignment: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { alignment: "deterministic".into() }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub endpoint: Option<String>,
    pub model_id: Option<String>,
    pub concurrency: Option<usize>,
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub replay_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub d_max: Option<f64>,
    pub type_penalty: Option<f64>,
    pub graph_cap: Option<f64>,
    pub min_degree: Option<usize>,
    pub min_docs: Option<usize>,
}

fn resolve(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path.as_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl Config {
    /// Reads a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.model.cache_dir);
        resolve(base, &mut cfg.model.replay_dir);
        resolve(base, &mut cfg.model.script);
        resolve(base, &mut cfg.model.prompt_dir);
        resolve(base, &mut cfg.map.overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.endpoint.is_some() {
            self.model.endpoint = o.endpoint;
        }
        if let Some(v) = o.model_id {
            self.model.model_id = v;
        }
        if let Some(v) = o.concurrency {
            self.model.concurrency = v;
        }
        if let Some(v) = o.profile {
            self.model.profile = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if o.replay_dir.is_some() {
            self.model.replay_dir = o.replay_dir;
        }
        if o.cache_dir.is_some() {
            self.model.cache_dir = o.cache_dir;
        }
        if o.d_max.is_some() {
            self.similarity.d_max = o.d_max;
        }
        if let Some(v) = o.type_penalty {
            self.similarity.type_penalty = v;
        }
        if o.graph_cap.is_some() {
            self.similarity.graph_cap = o.graph_cap;
        }
        if let Some(v) = o.min_degree {
            self.viz.min_degree = v;
        }
        if let Some(v) = o.min_docs {
            self.transitions.min_docs = v;
        }
    }

    /// Checks every value that is parsed lazily, so bad settings fail
    /// before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.profile()?;
        self.measure()?;
        self.transition_filter()?;
        self.viz_format()?;
        self.model_alignment()?;
        if self.model.concurrency == 0 {
            bail!("model.concurrency must be at least 1");
        }
        if self.similarity.type_penalty.is_nan() || self.similarity.type_penalty < 0.0 {
            bail!("similarity.type_penalty must be non-negative");
        }
        for (key, v) in [("d_max", self.similarity.d_max), ("graph_cap", self.similarity.graph_cap)] {
            if v.is_some_and(|v| v.is_nan() || v <= 0.0) {
                bail!("similarity.{key} must be positive");
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<DomainProfile> {
        Ok(self.model.profile.parse()?)
    }

    pub fn measure(&self) -> Result<Measure> {
        Ok(self.similarity.measure.parse()?)
    }

    pub fn similarity_config(&self) -> SimilarityConfig {
        SimilarityConfig {
            graph_cap: self.similarity.graph_cap,
            type_penalty: self.similarity.type_penalty,
            d_max: self.similarity.d_max,
            ..SimilarityConfig::default()
        }
    }

    pub fn viz_format(&self) -> Result<VizFormat> {
        Ok(self.viz.format.parse()?)
    }

    /// True when evaluation should ask the model to align names.
    pub fn model_alignment(&self) -> Result<bool> {
        match self.evaluation.alignment.as_str() {
            "deterministic" => Ok(false),
            "model" => Ok(true),
            other => Err(anyhow!("evaluation.alignment must be deterministic or model, got {other:?}")),
        }
    }

    pub fn transition_filter(&self) -> Result<Option<HashSet<LocationKind>>> {
        parse_filter(&self.transitions.filter)
    }
}

pub fn parse_filter(spec: &str) -> Result<Option<HashSet<LocationKind>>> {
    match spec.trim() {
        "" | "none" => Ok(None),
        "holocaust" => Ok(Some(HOLOCAUST_RELATED.into_iter().collect())),
        list => list
            .split(',')
            .map(|label| {
                LocationKind::from_label(label.trim()).ok_or_else(|| anyhow!("unknown location type {:?}", label.trim()))
            })
            .collect::<Result<HashSet<_>>>()
            .map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg.transitions.min_docs, 4);
        assert_eq!(cfg.model.api_key_env, "LOCMAP_API_KEY");
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[model]\nendpont = \"x\"").is_err());
        assert!(toml::from_str::<Config>("colour = 1").is_err());
    }

    #[test]
    fn flags_win() {
        let mut cfg: Config = toml::from_str("seed = 1\n[similarity]\nd_max = 3.0").unwrap();
        cfg.apply(Overrides { seed: Some(9), d_max: Some(5.0), ..Overrides::default() });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.similarity.d_max, Some(5.0));
    }

    #[test]
    fn filters() {
        assert!(parse_filter("none").unwrap().is_none());
        assert_eq!(parse_filter("holocaust").unwrap().unwrap().len(), 4);
        let f = parse_filter("City, Country").unwrap().unwrap();
        assert!(f.contains(&LocationKind::City) && f.contains(&LocationKind::Country));
        assert!(parse_filter("Planet").is_err());
    }

    #[test]
    fn bad_measure_fails_validation() {
        let cfg: Config = toml::from_str("[similarity]\nmeasure = \"cosine\"").unwrap();
        assert!(cfg.validate().is_err());
    }
}
