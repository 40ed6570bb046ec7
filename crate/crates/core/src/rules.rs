//! Rule verbalisation: renders generation and self-refinement prompts from
//! a class profile, talks to a configurable LLM HTTP endpoint, and persists
//! the resulting rules. Offline mode dumps prompt files without network.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::profiles::ProfileJson;
use crate::util::sha256_hex;

pub const RULE_TEMPERATURE: f64 = 0.2;
pub const RULE_MAX_TOKENS: u32 = 256;
/// At most this many features are listed in a prompt.
pub const RULE_FEATURE_LIMIT: usize = 15;
const RETRY_BASE_DELAY_MS: u64 = 200;

pub const SYSTEM_PROMPT: &str = "You are an expert in graph neural networks and scientific literature\n\
analysis. Your task is to generate concise, accurate natural language\n\
rules that describe what characterises a class of nodes in a citation\n\
network, based on the most discriminative input features identified\n\
by a GNN explainer.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleFeature {
    pub name: String,
    pub score: f64,
}

/// Inputs for one class's prompts. Construction sorts features by score
/// descending and truncates to the 15-feature prompt budget.
#[derive(Debug, Clone)]
pub struct RuleRequest {
    pub class_id: usize,
    pub class_name: String,
    pub dataset_context: String,
    pub features: Vec<RuleFeature>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RuleRequest {
    pub fn new(
        class_id: usize,
        class_name: impl Into<String>,
        dataset_context: impl Into<String>,
        mut features: Vec<RuleFeature>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(GraftError::InvalidInput(
                "rule request needs at least one feature".into(),
            ));
        }
        if features.iter().any(|f| !f.score.is_finite()) {
            return Err(GraftError::InvalidInput(
                "rule feature scores must be finite".into(),
            ));
        }
        features.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        features.truncate(RULE_FEATURE_LIMIT);
        Ok(Self {
            class_id,
            class_name: class_name.into(),
            dataset_context: dataset_context.into(),
            features,
            temperature: RULE_TEMPERATURE,
            max_tokens: RULE_MAX_TOKENS,
        })
    }

    /// Builds a request from an emitted profile; unnamed features fall back
    /// to `word_<index>`. Nothing besides the profile and the configured
    /// context string reaches the prompt.
    pub fn from_profile(
        profile: &ProfileJson,
        class_name: impl Into<String>,
        dataset_context: impl Into<String>,
    ) -> Result<Self> {
        let features = profile
            .top_k
            .iter()
            .map(|f| RuleFeature {
                name: f
                    .name
                    .clone()
                    .unwrap_or_else(|| format!("word_{}", f.index)),
                score: f.score,
            })
            .collect();
        Self::new(profile.class_id, class_name, dataset_context, features)
    }
}

/// Numbered feature list block, one line per feature.
fn feature_block(features: &[RuleFeature]) -> String {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| format!("  {}. {} (importance: {:.4})", i + 1, f.name, f.score))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_generation_prompt(req: &RuleRequest) -> String {
    format!(
        "{}\n\nUsing Integrated Gradients, the following features (words) are the\nmost important for classifying nodes into class \"{}\":\n\n{}\n\nGenerate a concise natural language rule (2-3 sentences) describing\nwhat characterises papers in the \"{}\" class. Mention the\nkey themes suggested by the top features. Write a global description\nof the class, not of a single paper.\n\nRule:",
        req.dataset_context,
        req.class_name,
        feature_block(&req.features),
        req.class_name,
    )
}

pub fn build_refinement_prompt(rule_text: &str, req: &RuleRequest) -> Result<String> {
    if rule_text.is_empty() {
        return Err(GraftError::InvalidInput(
            "refinement needs a non-empty rule".into(),
        ));
    }
    Ok(format!(
        "Here is a natural language rule describing the \"{}\" class:\n\n\"{}\"\n\nReview it against the top discriminative features:\n{}\n\nIf it is already accurate and complete, return it unchanged.\nOtherwise, improve it to better reflect the features (2-3 sentences).\n\nRefined rule:",
        req.class_name,
        rule_text,
        feature_block(&req.features),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    OpenAi,
    Anthropic,
    Ollama,
}

impl Provider {
    pub fn tag(&self) -> &'static str {
        match self {
            Provider::OpenAi => "openai",
            Provider::Anthropic => "anthropic",
            Provider::Ollama => "ollama",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "openai" => Ok(Provider::OpenAi),
            "anthropic" => Ok(Provider::Anthropic),
            "ollama" => Ok(Provider::Ollama),
            other => Err(GraftError::InvalidInput(format!(
                "unknown provider '{other}' (expected openai, anthropic, or ollama)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub provider: Provider,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the auth token, if any.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub offline: bool,
    pub max_retries: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Ollama,
            base_url: "http://localhost:11434".to_string(),
            model: "llama3".to_string(),
            auth_env: None,
            timeout_secs: 60,
            offline: true,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptHashes {
    pub generate_sha256: String,
    pub refine_sha256: String,
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rule {
    pub class_id: usize,
    pub class_name: String,
    pub initial: String,
    pub refined: String,
    pub changed: bool,
    pub prompts: PromptHashes,
    /// Offline runs dump prompts and leave the texts pending.
    #[serde(default, skip_serializing_if = "is_false")]
    pub pending: bool,
    /// The endpoint reported hitting the output-token cap.
    #[serde(default, skip_serializing_if = "is_false")]
    pub truncated: bool,
}

struct Completion {
    text: String,
    truncated: bool,
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

fn auth_token(config: &EndpointConfig) -> Result<Option<String>> {
    match &config.auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var).map(Some).map_err(|_| {
            GraftError::Endpoint(format!("auth environment variable {var} is not set"))
        }),
    }
}

/// One provider-shaped HTTP completion call, no retries.
fn complete_once(
    client: &reqwest::blocking::Client,
    config: &EndpointConfig,
    token: Option<&str>,
    system: &str,
    user: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<Completion> {
    let map_err =
        |e: reqwest::Error| GraftError::Endpoint(format!("request failed: {e}"));
    let response = match config.provider {
        Provider::OpenAi => {
            let mut req = client
                .post(join_url(&config.base_url, "chat/completions"))
                .json(&serde_json::json!({
                    "model": config.model,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ],
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                }));
            if let Some(t) = token {
                req = req.bearer_auth(t);
            }
            req.send().map_err(map_err)?
        }
        Provider::Anthropic => {
            let mut req = client
                .post(join_url(&config.base_url, "v1/messages"))
                .header("anthropic-version", "2023-06-01")
                .json(&serde_json::json!({
                    "model": config.model,
                    "system": system,
                    "messages": [{"role": "user", "content": user}],
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                }));
            if let Some(t) = token {
                req = req.header("x-api-key", t);
            }
            req.send().map_err(map_err)?
        }
        Provider::Ollama => client
            .post(join_url(&config.base_url, "api/generate"))
            .json(&serde_json::json!({
                "model": config.model,
                "system": system,
                "prompt": user,
                "stream": false,
                "options": {"temperature": temperature, "num_predict": max_tokens},
            }))
            .send()
            .map_err(map_err)?,
    };

    let status = response.status();
    if !status.is_success() {
        let body = response.text().unwrap_or_default();
        return Err(GraftError::Endpoint(format!(
            "endpoint returned {status}: {}",
            body.chars().take(200).collect::<String>()
        )));
    }
    let body: serde_json::Value = response
        .json()
        .map_err(|e| GraftError::Endpoint(format!("invalid JSON response: {e}")))?;

    let (text, truncated) = match config.provider {
        Provider::OpenAi => {
            let choice = &body["choices"][0];
            (
                choice["message"]["content"].as_str(),
                choice["finish_reason"].as_str() == Some("length"),
            )
        }
        Provider::Anthropic => (
            body["content"][0]["text"].as_str(),
            body["stop_reason"].as_str() == Some("max_tokens"),
        ),
        Provider::Ollama => (
            body["response"].as_str(),
            body["done_reason"].as_str() == Some("length"),
        ),
    };
    let text = text
        .ok_or_else(|| GraftError::Endpoint("response carries no completion text".into()))?
        .trim()
        .to_string();
    if text.is_empty() {
        return Err(GraftError::Endpoint("empty completion".into()));
    }
    Ok(Completion { text, truncated })
}

/// Completion with up to `max_retries` retried attempts and exponential
/// backoff between them.
fn complete(
    client: &reqwest::blocking::Client,
    config: &EndpointConfig,
    token: Option<&str>,
    system: &str,
    user: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<Completion> {
    let mut last_err = None;
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(
                RETRY_BASE_DELAY_MS << (attempt - 1).min(4),
            ));
        }
        match complete_once(client, config, token, system, user, temperature, max_tokens) {
            Ok(c) => return Ok(c),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn offline_prompt_path(dir: &Path, class_id: usize, stage: &str) -> std::path::PathBuf {
    dir.join(format!("class_{class_id}_{stage}.prompt.txt"))
}

fn write_prompt_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| GraftError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| GraftError::io(path.display().to_string(), e))
}

/// Generates one rule: a generation call followed by exactly one
/// refinement call. Offline mode writes both prompts under `prompt_dir`
/// (the refinement prompt keeps its `{current_rule}` placeholder, since the
/// rule does not exist yet) and returns a pending rule without touching the
/// network.
pub fn generate_rule(
    config: &EndpointConfig,
    req: &RuleRequest,
    prompt_dir: &Path,
) -> Result<Rule> {
    let generation = build_generation_prompt(req);
    if config.offline {
        let refinement = build_refinement_prompt("{current_rule}", req)?;
        write_prompt_file(
            &offline_prompt_path(prompt_dir, req.class_id, "generate"),
            &generation,
        )?;
        write_prompt_file(
            &offline_prompt_path(prompt_dir, req.class_id, "refine"),
            &refinement,
        )?;
        return Ok(Rule {
            class_id: req.class_id,
            class_name: req.class_name.clone(),
            initial: String::new(),
            refined: String::new(),
            changed: false,
            prompts: PromptHashes {
                generate_sha256: sha256_hex(generation.as_bytes()),
                refine_sha256: sha256_hex(refinement.as_bytes()),
            },
            pending: true,
            truncated: false,
        });
    }

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| GraftError::Endpoint(format!("client construction failed: {e}")))?;
    let token = auth_token(config)?;

    let first = complete(
        &client,
        config,
        token.as_deref(),
        SYSTEM_PROMPT,
        &generation,
        req.temperature,
        req.max_tokens,
    )?;
    let refinement = build_refinement_prompt(&first.text, req)?;
    let second = complete(
        &client,
        config,
        token.as_deref(),
        SYSTEM_PROMPT,
        &refinement,
        req.temperature,
        req.max_tokens,
    )?;

    Ok(Rule {
        class_id: req.class_id,
        class_name: req.class_name.clone(),
        changed: second.text != first.text,
        prompts: PromptHashes {
            generate_sha256: sha256_hex(generation.as_bytes()),
            refine_sha256: sha256_hex(refinement.as_bytes()),
        },
        initial: first.text,
        refined: second.text,
        pending: false,
        truncated: first.truncated || second.truncated,
    })
}

/// Generates rules for several classes, at most `concurrency` in flight;
/// the two calls for any one class stay sequential. Results keep request
/// order.
pub fn generate_rules(
    config: &EndpointConfig,
    requests: &[RuleRequest],
    prompt_dir: &Path,
    concurrency: usize,
) -> Result<Vec<Rule>> {
    if concurrency == 0 {
        return Err(GraftError::InvalidInput("concurrency must be positive".into()));
    }
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let workers = concurrency.min(requests.len());
    if workers == 1 || config.offline {
        return requests
            .iter()
            .map(|req| generate_rule(config, req, prompt_dir))
            .collect();
    }

    let results: Vec<std::sync::Mutex<Option<Result<Rule>>>> =
        (0..requests.len()).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for w in 0..workers {
            let results = &results;
            scope.spawn(move || {
                for (i, req) in requests.iter().enumerate() {
                    if i % workers == w {
                        let out = generate_rule(config, req, prompt_dir);
                        *results[i].lock().expect("result slot") = Some(out);
                    }
                }
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_request() -> RuleRequest {
        RuleRequest::new(
            0,
            "Reinforcement Learning",
            "Cora is a citation network of machine learning papers.",
            vec![
                RuleFeature { name: "reward".into(), score: 0.82 },
                RuleFeature { name: "policy".into(), score: 0.79 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn generation_prompt_layout_is_exact() {
        let req = sample_request();
        let prompt = build_generation_prompt(&req);
        let expected = concat!(
            "Cora is a citation network of machine learning papers.\n",
            "\n",
            "Using Integrated Gradients, the following features (words) are the\n",
            "most important for classifying nodes into class \"Reinforcement Learning\":\n",
            "\n",
            "  1. reward (importance: 0.8200)\n",
            "  2. policy (importance: 0.7900)\n",
            "\n",
            "Generate a concise natural language rule (2-3 sentences) describing\n",
            "what characterises papers in the \"Reinforcement Learning\" class. Mention the\n",
            "key themes suggested by the top features. Write a global description\n",
            "of the class, not of a single paper.\n",
            "\n",
            "Rule:",
        );
        assert_eq!(prompt, expected);
    }

    #[test]
    fn refinement_prompt_layout_is_exact() {
        let req = sample_request();
        let prompt = build_refinement_prompt("Papers about agents.", &req).unwrap();
        let expected = concat!(
            "Here is a natural language rule describing the \"Reinforcement Learning\" class:\n",
            "\n",
            "\"Papers about agents.\"\n",
            "\n",
            "Review it against the top discriminative features:\n",
            "  1. reward (importance: 0.8200)\n",
            "  2. policy (importance: 0.7900)\n",
            "\n",
            "If it is already accurate and complete, return it unchanged.\n",
            "Otherwise, improve it to better reflect the features (2-3 sentences).\n",
            "\n",
            "Refined rule:",
        );
        assert_eq!(prompt, expected);
        assert!(prompt.contains("return it unchanged."));
        assert!(build_refinement_prompt("", &req).is_err());
    }

    #[test]
    fn requests_sort_and_truncate_features() {
        let features: Vec<RuleFeature> = (0..20)
            .map(|i| RuleFeature { name: format!("f{i}"), score: i as f64 })
            .collect();
        let req = RuleRequest::new(1, "c", "ctx", features).unwrap();
        assert_eq!(req.features.len(), RULE_FEATURE_LIMIT);
        assert_eq!(req.features[0].name, "f19");
        let prompt = build_generation_prompt(&req);
        assert!(prompt.contains("  15. f5 (importance: 5.0000)"));
        assert!(!prompt.contains("  16."));
        assert!(RuleRequest::new(1, "c", "ctx", vec![]).is_err());
    }

    #[test]
    fn prompt_rendering_is_deterministic() {
        let a = build_generation_prompt(&sample_request());
        let b = build_generation_prompt(&sample_request());
        assert_eq!(a, b);
        assert_eq!(sha256_hex(a.as_bytes()), sha256_hex(b.as_bytes()));
    }

    #[test]
    fn offline_mode_writes_prompt_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = EndpointConfig { offline: true, ..Default::default() };
        let req = sample_request();
        let rule = generate_rule(&config, &req, dir.path()).unwrap();
        assert!(rule.pending);
        assert!(rule.initial.is_empty() && rule.refined.is_empty());
        let gen_path = dir.path().join("class_0_generate.prompt.txt");
        let ref_path = dir.path().join("class_0_refine.prompt.txt");
        let gen_bytes = std::fs::read(&gen_path).unwrap();
        let ref_bytes = std::fs::read(&ref_path).unwrap();
        assert_eq!(sha256_hex(&gen_bytes), rule.prompts.generate_sha256);
        assert_eq!(sha256_hex(&ref_bytes), rule.prompts.refine_sha256);
        assert_eq!(gen_bytes, build_generation_prompt(&req).into_bytes());
        // The refinement file keeps the placeholder since no rule exists yet.
        assert!(String::from_utf8(ref_bytes).unwrap().contains("\"{current_rule}\""));
    }

    #[test]
    fn provider_tags_round_trip() {
        for p in [Provider::OpenAi, Provider::Anthropic, Provider::Ollama] {
            assert_eq!(Provider::parse(p.tag()).unwrap(), p);
        }
        assert!(Provider::parse("bedrock").is_err());
    }
}
