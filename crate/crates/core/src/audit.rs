//! Bias-injection audit: plants a synthetic indicator column correlated
//! with one class, retrains, and checks whether the explanation pipeline
//! surfaces the planted column in that class's profile.

use serde::{Deserialize, Serialize};

use crate::data::{inject_bias, BiasSpec, Dataset};
use crate::error::{GraftError, Result};
use crate::nn::{train, Arch, Hyperparams};
use crate::pipeline::{explain_all, profile_json, ExplainSettings, RunMeta};
use crate::profiles::ProfileJson;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasReport {
    pub dataset: String,
    pub arch: String,
    pub sigma: f64,
    pub target_class: usize,
    pub seed: u64,
    /// Whether the injected column made the target class's top-K list.
    pub detected: bool,
    /// 1-based position of the injected column in the target profile.
    pub rank: Option<usize>,
    /// Non-target classes whose top-K list also contains the column.
    pub other_class_hits: Vec<usize>,
    pub retrain_test_accuracy: f64,
    pub config_hash: String,
}

/// Position of the injected column (always appended at the original
/// feature_dim index) in a profile's ranked feature list, 1-based.
fn injected_rank(profile: &ProfileJson, injected_index: usize) -> Option<usize> {
    profile
        .top_k
        .iter()
        .position(|f| f.index == injected_index)
        .map(|p| p + 1)
}

/// Injects a bias column, retrains from scratch, explains every class, and
/// reports where the injected column ranks. The rank comes from the same
/// profile structs the explanation pipeline emits.
pub fn run_bias_audit(
    dataset: &Dataset,
    arch: Arch,
    bias: &BiasSpec,
    hyperparams: &Hyperparams,
    settings: &ExplainSettings,
    config_hash: &str,
) -> Result<(BiasReport, Vec<ProfileJson>)> {
    let biased = inject_bias(dataset, bias)?;
    let injected_index = dataset.feature_dim;
    let model = train(&biased, arch, hyperparams)?;
    let meta = RunMeta {
        dataset: biased.name.clone(),
        arch: arch.tag().to_string(),
        seed: hyperparams.seed,
        config_hash: config_hash.to_string(),
    };
    let profiles = explain_all(&model, &biased, settings)?;
    let jsons: Vec<ProfileJson> = profiles
        .iter()
        .map(|p| profile_json(p, &biased, &meta, settings))
        .collect();

    let target = jsons
        .iter()
        .find(|p| p.class_id == bias.target_class)
        .ok_or_else(|| {
            GraftError::InvalidInput(format!("no profile for class {}", bias.target_class))
        })?;
    let rank = injected_rank(target, injected_index);
    let other_class_hits: Vec<usize> = jsons
        .iter()
        .filter(|p| p.class_id != bias.target_class)
        .filter(|p| injected_rank(p, injected_index).is_some())
        .map(|p| p.class_id)
        .collect();

    let report = BiasReport {
        dataset: dataset.name.clone(),
        arch: arch.tag().to_string(),
        sigma: bias.sigma,
        target_class: bias.target_class,
        seed: bias.seed,
        detected: rank.is_some(),
        rank,
        other_class_hits,
        retrain_test_accuracy: model.test_accuracy,
        config_hash: config_hash.to_string(),
    };
    Ok((report, jsons))
}

/// Audits a list of bias strengths with everything else held fixed.
pub fn noise_sweep(
    dataset: &Dataset,
    arch: Arch,
    sigmas: &[f64],
    target_class: usize,
    seed: u64,
    hyperparams: &Hyperparams,
    settings: &ExplainSettings,
    config_hash: &str,
) -> Result<Vec<BiasReport>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let bias = BiasSpec {
                sigma,
                target_class,
                seed,
            };
            run_bias_audit(dataset, arch, &bias, hyperparams, settings, config_hash)
                .map(|(report, _)| report)
        })
        .collect()
}

/// Audits every class in turn at one bias strength.
pub fn multiclass_sweep(
    dataset: &Dataset,
    arch: Arch,
    sigma: f64,
    seed: u64,
    hyperparams: &Hyperparams,
    settings: &ExplainSettings,
    config_hash: &str,
) -> Result<Vec<BiasReport>> {
    (0..dataset.class_count)
        .map(|target_class| {
            let bias = BiasSpec {
                sigma,
                target_class,
                seed,
            };
            run_bias_audit(dataset, arch, &bias, hyperparams, settings, config_hash)
                .map(|(report, _)| report)
        })
        .collect()
}
