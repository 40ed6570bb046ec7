//! End-to-end explanation pipeline: exemplar selection, per-exemplar
//! attribution, and aggregation into class profiles. Shared by the CLI and
//! by the bias audit so both always operate on identical profile structures.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionMethod, Quadrature};
use crate::data::Dataset;
use crate::error::{GraftError, Result};
use crate::exemplars::{select_cs_fps, select_fps, select_random, ExemplarMode};
use crate::nn::TrainedModel;
use crate::profiles::{
    aggregate, Aggregation, AttributionMeta, ClassProfile, ExemplarAttribution, ProfileJson,
    TopFeature,
};

/// Knobs of the explanation pipeline (stages 1 to 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    /// Exemplars per class.
    pub k: usize,
    /// Features kept in profile summaries.
    pub top_k: usize,
    /// Quadrature steps for integrated gradients.
    pub steps: usize,
    pub quadrature: Quadrature,
    pub method: AttributionMethod,
    pub aggregation: Aggregation,
    pub exemplar_mode: ExemplarMode,
    /// Base seed for the random exemplar mode; the class id is added so
    /// classes draw distinct samples.
    pub selection_seed: u64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            k: 10,
            top_k: 20,
            steps: 50,
            quadrature: Quadrature::GaussLegendre,
            method: AttributionMethod::IntegratedGradients,
            aggregation: Aggregation::Mean,
            exemplar_mode: ExemplarMode::Fps,
            selection_seed: 0,
        }
    }
}

/// Identity of one (dataset, arch, seed) run for output files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub config_hash: String,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Profiles one class. Candidate exemplars are all nodes whose ground-truth
/// label is `class`, across every split.
pub fn explain_class(
    model: &TrainedModel,
    dataset: &Dataset,
    class: usize,
    settings: &ExplainSettings,
) -> Result<ClassProfile> {
    let embeddings = model.embeddings(&dataset.features);
    let probs = softmax_rows(&model.logits(&dataset.features));
    explain_class_with(model, dataset, class, settings, &embeddings, &probs)
}

fn explain_class_with(
    model: &TrainedModel,
    dataset: &Dataset,
    class: usize,
    settings: &ExplainSettings,
    embeddings: &Array2<f64>,
    probs: &Array2<f64>,
) -> Result<ClassProfile> {
    if class >= dataset.class_count {
        return Err(GraftError::InvalidInput(format!(
            "class {class} out of range for {} classes",
            dataset.class_count
        )));
    }
    if settings.k == 0 {
        return Err(GraftError::InvalidInput(
            "at least one exemplar per class is required".into(),
        ));
    }
    let candidates = dataset.class_nodes(class);
    if candidates.is_empty() {
        return Err(GraftError::InvalidInput(format!(
            "class {class} has no nodes"
        )));
    }

    let exemplars = match settings.exemplar_mode {
        ExemplarMode::Fps => select_fps(embeddings, &candidates, settings.k),
        ExemplarMode::CsFps => {
            let conf: Vec<f64> = (0..dataset.node_count).map(|v| probs[(v, class)]).collect();
            select_cs_fps(embeddings, &candidates, &conf, settings.k)
        }
        ExemplarMode::Random => select_random(
            &candidates,
            settings.k,
            settings.selection_seed.wrapping_add(class as u64),
        ),
    };

    let mut attributions = Vec::with_capacity(exemplars.len());
    for &e in &exemplars {
        let field = model.class_field(&dataset.features, e, class);
        let row = dataset.features.row_dense(e);
        let a = attribute(
            &field,
            &row,
            settings.method,
            settings.steps,
            settings.quadrature,
        )?;
        attributions.push(ExemplarAttribution {
            node: e,
            attribution: a,
            confidence: probs[(e, class)],
        });
    }
    aggregate(class, &attributions, settings.aggregation)
}

/// Profiles every class, reusing one embedding and confidence pass.
pub fn explain_all(
    model: &TrainedModel,
    dataset: &Dataset,
    settings: &ExplainSettings,
) -> Result<Vec<ClassProfile>> {
    let embeddings = model.embeddings(&dataset.features);
    let probs = softmax_rows(&model.logits(&dataset.features));
    (0..dataset.class_count)
        .map(|c| explain_class_with(model, dataset, c, settings, &embeddings, &probs))
        .collect()
}

/// Serialisable view of a profile under a run identity. Feature names are
/// attached only when the dataset carries them.
pub fn profile_json(
    profile: &ClassProfile,
    dataset: &Dataset,
    meta: &RunMeta,
    settings: &ExplainSettings,
) -> ProfileJson {
    let top_k = profile
        .top_k(settings.top_k)
        .into_iter()
        .map(|(index, score)| TopFeature {
            index,
            name: dataset
                .feature_names
                .as_ref()
                .map(|names| names[index].clone()),
            score,
        })
        .collect();
    ProfileJson {
        dataset: meta.dataset.clone(),
        arch: meta.arch.clone(),
        seed: meta.seed,
        class_id: profile.class_id,
        aggregation: profile.aggregation.tag().to_string(),
        attribution: AttributionMeta {
            method: settings.method.tag().to_string(),
            steps: settings.steps,
            quadrature: settings.quadrature.tag().to_string(),
        },
        exemplars: profile.exemplars.clone(),
        top_k,
        aggregate_l1: profile.aggregate_l1(),
        signed_mean_sum: profile.signed_mean_sum(),
        config_hash: meta.config_hash.clone(),
    }
}

/// Top-K index sets per class, in rank order.
pub fn top_k_sets(profiles: &[ClassProfile], k: usize) -> Vec<Vec<usize>> {
    profiles
        .iter()
        .map(|p| p.top_k(k).into_iter().map(|(i, _)| i).collect())
        .collect()
}
