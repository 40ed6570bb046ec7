use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::data::{Dataset, Split};
use crate::error::{GraftError, Result};
use crate::nn::adam::Adam;
use crate::nn::forward::build_forward;
use crate::nn::graph::ArchOps;
use crate::nn::params::{Arch, ArchParams};
use crate::nn::{Hyperparams, TrainedModel};
use crate::tape::Tape;

/// Trains a model full-batch on the dataset's training nodes with Adam and
/// coupled L2 weight decay on all parameters. Deterministic for a fixed
/// (dataset, arch, hyperparams) triple.
pub fn train(dataset: &Dataset, arch: Arch, hp: &Hyperparams) -> Result<TrainedModel> {
    if hp.epochs == 0 {
        return Err(GraftError::InvalidInput("epochs must be positive".into()));
    }
    if hp.hidden_dim == 0 {
        return Err(GraftError::InvalidInput("hidden_dim must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ArchParams::init(
        arch,
        dataset.feature_dim,
        hp.hidden_dim,
        dataset.class_count,
        &mut rng,
    );
    let ops = ArchOps::build(arch, &dataset.adjacency);
    let features = Arc::new(dataset.features.clone());
    let labels = Arc::new(dataset.labels.clone());
    let train_nodes = Arc::new(dataset.split_nodes(Split::Train));

    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, t)| t.dim()).collect();
    let mut adam = Adam::new(hp.learning_rate, &shapes);
    let mut initial_train_accuracy = 0.0;

    for epoch in 0..hp.epochs {
        let mut tape = Tape::new();
        let fg = build_forward(&mut tape, &params, &ops, &features, true);
        let loss = tape.masked_cross_entropy(fg.logits, labels.clone(), train_nodes.clone());
        let loss_value = tape.value(loss)[(0, 0)];
        if !loss_value.is_finite() {
            return Err(GraftError::Diverged { epoch });
        }
        if epoch == 0 {
            initial_train_accuracy =
                accuracy_of_logits(tape.value(fg.logits), &labels, &train_nodes);
        }

        let grads = tape.backward(loss);
        let mut grad_list: Vec<Array2<f64>> = Vec::with_capacity(fg.param_vars.len());
        for (var, (_, tensor)) in fg.param_vars.iter().zip(params.tensors()) {
            let mut g = match grads.get(*var) {
                Some(g) => g.clone(),
                None => Array2::zeros(tensor.dim()),
            };
            if hp.weight_decay != 0.0 {
                g.zip_mut_with(tensor, |gv, &pv| *gv += hp.weight_decay * pv);
            }
            grad_list.push(g);
        }
        adam.step(&mut params.tensors_mut(), &grad_list);
    }

    let mut model = TrainedModel {
        arch,
        hyperparams: hp.clone(),
        feature_dim: dataset.feature_dim,
        class_count: dataset.class_count,
        params,
        ops,
        initial_train_accuracy,
        train_accuracy: 0.0,
        val_accuracy: 0.0,
        test_accuracy: 0.0,
    };
    let logits = model.logits(&dataset.features);
    model.train_accuracy =
        accuracy_of_logits(&logits, &dataset.labels, &dataset.split_nodes(Split::Train));
    model.val_accuracy =
        accuracy_of_logits(&logits, &dataset.labels, &dataset.split_nodes(Split::Val));
    model.test_accuracy =
        accuracy_of_logits(&logits, &dataset.labels, &dataset.split_nodes(Split::Test));
    Ok(model)
}

/// Argmax accuracy over `nodes`; ties resolve to the lowest class index.
/// Returns 0.0 for an empty node set.
pub fn accuracy_of_logits(logits: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&v| argmax_row(logits, v) == labels[v])
        .count();
    correct as f64 / nodes.len() as f64
}

pub fn argmax_row(m: &Array2<f64>, row: usize) -> usize {
    let r = m.row(row);
    let mut best = 0;
    for j in 1..r.len() {
        if r[j] > r[best] {
            best = j;
        }
    }
    best
}
