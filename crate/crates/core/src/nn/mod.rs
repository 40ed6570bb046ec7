mod adam;
mod checkpoint;
mod forward;
mod graph;
mod linear;
mod params;
mod patched;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{evaluate, GAT_LEAKY_SLOPE};
pub use graph::{ArchOps, GatEdges};
pub use linear::LinearDecoder;
pub use params::{Arch, ArchParams, MlpParams, ALL_ARCHS};
pub use patched::PatchPlan;
pub use train::{accuracy_of_logits, argmax_row, train};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::ScalarField;
use crate::sparse::SparseRowMatrix;

/// Training hyperparameters; identical across architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_dim: 64,
            epochs: 500,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

/// A trained two-layer model bound to one graph's aggregation operators.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: Arch,
    pub hyperparams: Hyperparams,
    pub feature_dim: usize,
    pub class_count: usize,
    pub params: ArchParams,
    pub ops: ArchOps,
    pub initial_train_accuracy: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

impl TrainedModel {
    /// Full-graph logits for arbitrary features over the bound graph.
    pub fn logits(&self, features: &SparseRowMatrix) -> Array2<f64> {
        forward::evaluate(&self.params, &self.ops, features).1
    }

    /// Layer-1 post-activation states; the embedding space for exemplar
    /// selection.
    pub fn embeddings(&self, features: &SparseRowMatrix) -> Array2<f64> {
        forward::evaluate(&self.params, &self.ops, features).0
    }

    /// Softmax confidence of `class` per node.
    pub fn class_confidences(&self, features: &SparseRowMatrix, class: usize) -> Vec<f64> {
        let logits = self.logits(features);
        (0..logits.nrows())
            .map(|v| {
                let r = logits.row(v);
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = r.iter().map(|&x| (x - max).exp()).sum();
                (r[class] - max).exp() / z
            })
            .collect()
    }

    pub fn predictions(&self, features: &SparseRowMatrix) -> Vec<usize> {
        let logits = self.logits(features);
        (0..logits.nrows())
            .map(|v| train::argmax_row(&logits, v))
            .collect()
    }

    /// Argmax accuracy over `nodes` with ties resolved to the lowest class.
    pub fn accuracy(&self, features: &SparseRowMatrix, labels: &[usize], nodes: &[usize]) -> f64 {
        train::accuracy_of_logits(&self.logits(features), labels, nodes)
    }

    /// Prepares the patched forward pass for one exemplar row.
    pub fn patch_plan<'m>(
        &'m self,
        features: &SparseRowMatrix,
        exemplar: usize,
    ) -> PatchPlan<'m> {
        PatchPlan::new(&self.params, &self.ops, features, exemplar)
    }

    /// The logit of `class` at `exemplar` as a differentiable function of
    /// the exemplar's own feature row; all other rows stay frozen.
    pub fn class_field<'m>(
        &'m self,
        features: &SparseRowMatrix,
        exemplar: usize,
        class: usize,
    ) -> ModelClassField<'m> {
        ModelClassField {
            plan: self.patch_plan(features, exemplar),
            target: exemplar,
            class,
        }
    }

    /// d logit(target, class) / d x[source]; `source` and `target` may
    /// differ, which probes how far input sensitivity reaches in the graph.
    pub fn input_gradient_cross(
        &self,
        features: &SparseRowMatrix,
        source: usize,
        target: usize,
        class: usize,
    ) -> Vec<f64> {
        let plan = self.patch_plan(features, source);
        let row = features.row_dense(source);
        let (_, g) = plan.run(&row, target, class, true);
        g.expect("gradient requested")
    }

    /// d logit(node, class) / d x[node] at the node's own features.
    pub fn input_gradient(
        &self,
        features: &SparseRowMatrix,
        node: usize,
        class: usize,
    ) -> Vec<f64> {
        self.input_gradient_cross(features, node, node, class)
    }
}

/// [`ScalarField`] view of one (exemplar, class) pair of a trained model.
pub struct ModelClassField<'m> {
    plan: PatchPlan<'m>,
    target: usize,
    class: usize,
}

impl ScalarField for ModelClassField<'_> {
    fn value(&self, row: &[f64]) -> f64 {
        self.plan.run(row, self.target, self.class, false).0
    }

    fn gradient(&self, row: &[f64]) -> Vec<f64> {
        self.plan
            .run(row, self.target, self.class, true)
            .1
            .expect("gradient requested")
    }
}
