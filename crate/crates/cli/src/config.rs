//! Run configuration: TOML file schema, flag overrides, validation, and the
//! config hash embedded in every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use graft_core::attribution::{AttributionMethod, Quadrature};
use graft_core::data::{generate_planted, load_dataset, Dataset, PlantedSpec};
use graft_core::exemplars::ExemplarMode;
use graft_core::nn::{Arch, Hyperparams};
use graft_core::pipeline::ExplainSettings;
use graft_core::profiles::Aggregation;
use graft_core::rules::{EndpointConfig, Provider};

/// Full effective configuration. The TOML config file mirrors this
/// structure; command-line flags override individual fields afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// "planted" for the synthetic generator, otherwise a bundle directory.
    pub dataset: String,
    pub out: PathBuf,
    pub architectures: Vec<String>,
    pub seeds: Vec<u64>,
    /// Worker threads for independent (arch, seed) jobs.
    pub workers: usize,
    pub planted: PlantedConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub audit: AuditConfig,
    pub metrics: MetricsConfig,
    pub rules: RulesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "planted".to_string(),
            out: PathBuf::from("out"),
            architectures: vec!["gcn".to_string()],
            seeds: vec![0, 1, 2, 3, 4],
            workers: 4,
            planted: PlantedConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            audit: AuditConfig::default(),
            metrics: MetricsConfig::default(),
            rules: RulesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub node_count: usize,
    pub class_count: usize,
    pub feature_dim: usize,
    pub planted_per_class: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_flip_noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        let s = PlantedSpec::default();
        PlantedConfig {
            node_count: s.node_count,
            class_count: s.class_count,
            feature_dim: s.feature_dim,
            planted_per_class: s.planted_per_class,
            intra_edge_prob: s.intra_edge_prob,
            inter_edge_prob: s.inter_edge_prob,
            feature_flip_noise: s.feature_flip_noise,
            seed: s.seed,
        }
    }
}

impl PlantedConfig {
    pub fn to_spec(&self) -> PlantedSpec {
        PlantedSpec {
            node_count: self.node_count,
            class_count: self.class_count,
            feature_dim: self.feature_dim,
            planted_per_class: self.planted_per_class,
            intra_edge_prob: self.intra_edge_prob,
            inter_edge_prob: self.inter_edge_prob,
            feature_flip_noise: self.feature_flip_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        TrainConfig {
            hidden_dim: h.hidden_dim,
            epochs: h.epochs,
            learning_rate: h.learning_rate,
            weight_decay: h.weight_decay,
        }
    }
}

impl TrainConfig {
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub k: usize,
    pub top_k: usize,
    pub steps: usize,
    pub quadrature: String,
    pub method: String,
    pub aggregation: String,
    pub exemplar_mode: String,
    pub selection_seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let s = ExplainSettings::default();
        ExplainConfig {
            k: s.k,
            top_k: s.top_k,
            steps: s.steps,
            quadrature: s.quadrature.tag().to_string(),
            method: s.method.tag().to_string(),
            aggregation: s.aggregation.tag().to_string(),
            exemplar_mode: s.exemplar_mode.tag().to_string(),
            selection_seed: s.selection_seed,
        }
    }
}

impl ExplainConfig {
    pub fn settings(&self) -> Result<ExplainSettings, String> {
        Ok(ExplainSettings {
            k: self.k,
            top_k: self.top_k,
            steps: self.steps,
            quadrature: Quadrature::parse(&self.quadrature)
                .ok_or_else(|| format!("explain.quadrature: unknown value '{}'", self.quadrature))?,
            method: AttributionMethod::parse(&self.method)
                .ok_or_else(|| format!("explain.method: unknown value '{}'", self.method))?,
            aggregation: Aggregation::parse(&self.aggregation)
                .ok_or_else(|| format!("explain.aggregation: unknown value '{}'", self.aggregation))?,
            exemplar_mode: ExemplarMode::parse(&self.exemplar_mode)
                .ok_or_else(|| format!("explain.exemplar_mode: unknown value '{}'", self.exemplar_mode))?,
            selection_seed: self.selection_seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub sigma: f64,
    pub target_class: usize,
    /// Extra strengths for the noise sweep; empty disables the sweep.
    pub sigmas: Vec<f64>,
    pub epochs: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            sigma: 0.05,
            target_class: 0,
            sigmas: Vec::new(),
            epochs: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Architectures that must share a feature for consensus.
    pub tau: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { tau: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulesConfig {
    pub provider: String,
    pub base_url: String,
    pub model: String,
    /// Environment variable carrying the auth token; empty means none.
    pub auth_env: String,
    pub timeout_secs: u64,
    pub offline: bool,
    pub max_retries: u32,
    pub concurrency: usize,
    pub dataset_context: String,
    /// Class display names by id; missing entries fall back to `class_<id>`.
    pub class_names: Vec<String>,
}

impl Default for RulesConfig {
    fn default() -> Self {
        let e = EndpointConfig::default();
        RulesConfig {
            provider: e.provider.tag().to_string(),
            base_url: e.base_url,
            model: e.model,
            auth_env: String::new(),
            timeout_secs: e.timeout_secs,
            offline: e.offline,
            max_retries: e.max_retries,
            concurrency: 2,
            dataset_context: "A graph of nodes with bag-of-words features.".to_string(),
            class_names: Vec::new(),
        }
    }
}

impl RulesConfig {
    pub fn endpoint(&self) -> Result<EndpointConfig, String> {
        Ok(EndpointConfig {
            provider: Provider::parse(&self.provider).map_err(|e| format!("rules.provider: {e}"))?,
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            auth_env: if self.auth_env.is_empty() {
                None
            } else {
                Some(self.auth_env.clone())
            },
            timeout_secs: self.timeout_secs,
            offline: self.offline,
            max_retries: self.max_retries,
        })
    }

    pub fn class_name(&self, class_id: usize) -> String {
        self.class_names
            .get(class_id)
            .cloned()
            .unwrap_or_else(|| format!("class_{class_id}"))
    }
}

/// Flag overrides; every flag mirrors one config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub arch: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub k: Option<usize>,
    pub top_k: Option<usize>,
    pub steps: Option<usize>,
    pub quadrature: Option<String>,
    pub aggregation: Option<String>,
    pub sigma: Option<f64>,
    pub target_class: Option<usize>,
    pub offline_rules: bool,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, String> {
    let mut config = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))?
        }
    };
    if let Some(v) = &overrides.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = &overrides.arch {
        config.architectures = v.clone();
    }
    if let Some(v) = &overrides.seeds {
        config.seeds = v.clone();
    }
    if let Some(v) = overrides.k {
        config.explain.k = v;
    }
    if let Some(v) = overrides.top_k {
        config.explain.top_k = v;
    }
    if let Some(v) = overrides.steps {
        config.explain.steps = v;
    }
    if let Some(v) = &overrides.quadrature {
        config.explain.quadrature = v.clone();
    }
    if let Some(v) = &overrides.aggregation {
        config.explain.aggregation = v.clone();
    }
    if let Some(v) = overrides.sigma {
        config.audit.sigma = v;
    }
    if let Some(v) = overrides.target_class {
        config.audit.target_class = v;
    }
    if overrides.offline_rules {
        config.rules.offline = true;
    }
    if let Some(v) = &overrides.out {
        config.out = v.clone();
    }
    if let Some(v) = overrides.workers {
        config.workers = v;
    }
    validate(&config)?;
    Ok(config)
}

fn positive(value: usize, field: &str) -> Result<(), String> {
    if value == 0 {
        return Err(format!("{field} must be positive"));
    }
    Ok(())
}

fn validate(config: &RunConfig) -> Result<(), String> {
    if config.dataset.is_empty() {
        return Err("dataset must not be empty".into());
    }
    if config.architectures.is_empty() {
        return Err("architectures must not be empty".into());
    }
    for a in &config.architectures {
        Arch::parse(a).ok_or_else(|| format!("architectures: unknown architecture '{a}'"))?;
    }
    let mut archs = config.architectures.clone();
    archs.sort();
    archs.dedup();
    if archs.len() != config.architectures.len() {
        return Err("architectures must be distinct".into());
    }
    if config.seeds.is_empty() {
        return Err("seeds must not be empty".into());
    }
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != config.seeds.len() {
        return Err("seeds must be distinct".into());
    }
    positive(config.workers, "workers")?;
    positive(config.train.hidden_dim, "train.hidden_dim")?;
    positive(config.train.epochs, "train.epochs")?;
    positive(config.explain.k, "explain.k")?;
    positive(config.explain.top_k, "explain.top_k")?;
    positive(config.explain.steps, "explain.steps")?;
    positive(config.audit.epochs, "audit.epochs")?;
    positive(config.metrics.tau, "metrics.tau")?;
    positive(config.rules.concurrency, "rules.concurrency")?;
    config.explain.settings()?;
    config.rules.endpoint()?;
    if !(0.0..=1.0).contains(&config.audit.sigma) {
        return Err("audit.sigma must lie in [0, 1]".into());
    }
    for s in &config.audit.sigmas {
        if !(0.0..=1.0).contains(s) {
            return Err("audit.sigmas entries must lie in [0, 1]".into());
        }
    }
    if config.dataset == "planted" {
        graft_core::data::validate_spec(&config.planted.to_spec())
            .map_err(|e| format!("planted: {e}"))?;
    }
    Ok(())
}

/// Hash of the effective configuration; every output embeds it so artifacts
/// can be traced back to the exact settings that produced them.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves the dataset: the planted generator or a bundle directory.
pub fn resolve_dataset(config: &RunConfig) -> Result<Dataset, String> {
    if config.dataset == "planted" {
        let planted = generate_planted(&config.planted.to_spec())
            .map_err(|e| format!("planted generation failed: {e}"))?;
        Ok(planted.dataset)
    } else {
        load_dataset(Path::new(&config.dataset)).map_err(|e| e.to_string())
    }
}
