mod common;

use common::{bfs_distances, fd_gradient, small_planted, ALL_ARCHS};
use graft_core::nn::{train, Hyperparams, TrainedModel};
use graft_core::sparse::SparseRowMatrix;

fn trained(arch: graft_core::nn::Arch, seed: u64) -> (TrainedModel, graft_core::data::Dataset) {
    let ds = small_planted(30, 13).dataset;
    let hp = Hyperparams {
        hidden_dim: 8,
        epochs: 40,
        seed,
        ..Hyperparams::default()
    };
    let model = train(&ds, arch, &hp).unwrap();
    (model, ds)
}

/// The patched-row gradient must match central differences taken through
/// the independent full forward pass, for every architecture.
#[test]
fn input_gradients_match_finite_differences() {
    for arch in ALL_ARCHS {
        let (model, ds) = trained(arch, 2);
        let class = 1;
        for node in [0usize, 7, 19] {
            let analytic = model.input_gradient(&ds.features, node, class);
            let fd = fd_gradient(&model, &ds.features, node, node, class, 1e-5);
            for i in 0..ds.feature_dim {
                let diff = (analytic[i] - fd[i]).abs();
                let tol = 1e-6 + 1e-4 * fd[i].abs();
                assert!(
                    diff <= tol,
                    "{arch} node {node} feature {i}: analytic {} vs fd {}",
                    analytic[i],
                    fd[i]
                );
            }
        }
    }
}

/// Cross-node gradients at distance 2 must also match finite differences;
/// this exercises the propagation paths rather than just the self row.
#[test]
fn cross_node_gradients_match_finite_differences() {
    for arch in ALL_ARCHS {
        let (model, ds) = trained(arch, 3);
        let (target, source) = (0..ds.node_count)
            .find_map(|t| {
                let dist = bfs_distances(&ds, t);
                (0..ds.node_count).find(|&v| dist[v] == 2).map(|s| (t, s))
            })
            .expect("some node pair at distance 2 exists");
        let analytic = model.input_gradient_cross(&ds.features, source, target, 0);
        let fd = fd_gradient(&model, &ds.features, source, target, 0, 1e-5);
        for i in 0..ds.feature_dim {
            let diff = (analytic[i] - fd[i]).abs();
            let tol = 1e-6 + 1e-4 * fd[i].abs();
            assert!(
                diff <= tol,
                "{arch} feature {i}: analytic {} vs fd {}",
                analytic[i],
                fd[i]
            );
        }
        assert!(
            analytic.iter().any(|&g| g != 0.0),
            "{arch}: distance-2 influence should be nonzero for this graph"
        );
    }
}

/// Two message-passing layers reach exactly two hops: the gradient of a
/// logit with respect to any node further away is identically zero, not
/// merely small.
#[test]
fn influence_stops_exactly_at_two_hops() {
    for arch in ALL_ARCHS {
        let (model, ds) = trained(arch, 4);
        let (target, dist) = (0..ds.node_count)
            .map(|t| (t, bfs_distances(&ds, t)))
            .find(|(t, dist)| {
                let connected = !ds.adjacency.row(*t).0.is_empty();
                connected && dist.iter().any(|&d| d > 2)
            })
            .expect("a connected node with out-of-range peers exists");
        let far: Vec<usize> = (0..ds.node_count).filter(|&v| dist[v] > 2).collect();
        for &source in far.iter().take(3) {
            for class in 0..ds.class_count {
                let g = model.input_gradient_cross(&ds.features, source, target, class);
                assert!(
                    g.iter().all(|&v| v == 0.0),
                    "{arch}: node {source} at distance {} leaks into node {target}",
                    dist[source]
                );
            }
        }
    }
}

/// The patched forward pass must reproduce the ordinary forward logits when
/// the patch equals the node's actual feature row.
#[test]
fn patched_forward_agrees_with_full_forward() {
    for arch in ALL_ARCHS {
        let (model, ds) = trained(arch, 5);
        let logits = model.logits(&ds.features);
        for node in [0usize, 11, 29] {
            let plan = model.patch_plan(&ds.features, node);
            let row = ds.features.row_dense(node);
            for class in 0..ds.class_count {
                let (patched, _) = plan.run(&row, node, class, false);
                let full = logits[(node, class)];
                assert!(
                    (patched - full).abs() < 1e-10,
                    "{arch} node {node} class {class}: patched {patched} vs full {full}"
                );
            }
        }
    }
}

/// Scaling the patched row must not disturb other rows' contributions:
/// at alpha = 0 the logit equals the forward pass with that row zeroed.
#[test]
fn zero_patch_matches_zeroed_features() {
    for arch in ALL_ARCHS {
        let (model, ds) = trained(arch, 6);
        let node = 3usize;
        let wiped: Vec<(usize, usize, f64)> = ds
            .features
            .iter()
            .filter(|&(r, _, _)| r != node)
            .collect();
        let wiped =
            SparseRowMatrix::from_triplets(ds.node_count, ds.feature_dim, wiped).unwrap();
        let want = model.logits(&wiped);
        let plan = model.patch_plan(&ds.features, node);
        let zero_row = vec![0.0; ds.feature_dim];
        for class in 0..ds.class_count {
            let (got, _) = plan.run(&zero_row, node, class, false);
            assert!(
                (got - want[(node, class)]).abs() < 1e-10,
                "{arch} class {class}: {got} vs {}",
                want[(node, class)]
            );
        }
    }
}
