//! Shared fixtures and independent dense oracles for integration tests.
//!
//! The oracles re-derive every architecture's forward pass with plain dense
//! linear algebra and explicit loops, deliberately sharing no code with the
//! library's sparse/tape implementation.

#![allow(dead_code)]

use ndarray::Array2;

use graft_core::data::{generate_planted, Dataset, PlantedDataset, PlantedSpec};
use graft_core::nn::{Arch, ArchParams, MlpParams, GAT_LEAKY_SLOPE};

pub fn small_planted(node_count: usize, seed: u64) -> PlantedDataset {
    generate_planted(&PlantedSpec {
        node_count,
        class_count: 3,
        feature_dim: 24,
        planted_per_class: 2,
        intra_edge_prob: 0.2,
        inter_edge_prob: 0.04,
        feature_flip_noise: 0.1,
        seed,
    })
    .expect("valid planted spec")
}

pub fn default_planted(seed: u64) -> PlantedDataset {
    generate_planted(&PlantedSpec {
        seed,
        ..PlantedSpec::default()
    })
    .expect("valid planted spec")
}

fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v.max(0.0))
}

fn add_bias(m: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        for j in 0..row.len() {
            row[j] += b[(0, j)];
        }
    }
    out
}

fn dense_adjacency(ds: &Dataset) -> Array2<f64> {
    ds.adjacency.to_dense()
}

fn dense_features(ds: &Dataset) -> Array2<f64> {
    ds.features.to_dense()
}

/// D^-1/2 (A + I) D^-1/2 built densely.
pub fn dense_gcn_operator(ds: &Dataset) -> Array2<f64> {
    let n = ds.node_count;
    let a = dense_adjacency(ds);
    let mut with_self = a;
    for i in 0..n {
        with_self[(i, i)] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| with_self.row(i).sum()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if with_self[(i, j)] != 0.0 {
                out[(i, j)] = with_self[(i, j)] / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    out
}

/// Row-normalised neighbour mean without self loops.
pub fn dense_mean_operator(ds: &Dataset) -> Array2<f64> {
    let n = ds.node_count;
    let a = dense_adjacency(ds);
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let deg = a.row(i).sum();
        if deg > 0.0 {
            for j in 0..n {
                out[(i, j)] = a[(i, j)] / deg;
            }
        }
    }
    out
}

/// (embeddings, logits) for any architecture, computed densely.
pub fn dense_forward(ds: &Dataset, params: &ArchParams) -> (Array2<f64>, Array2<f64>) {
    let x = dense_features(ds);
    match params {
        ArchParams::Gcn { w1, b1, w2, b2 } => {
            let op = dense_gcn_operator(ds);
            let h = relu(&add_bias(&op.dot(&x.dot(w1)), b1));
            let logits = add_bias(&op.dot(&h.dot(w2)), b2);
            (h, logits)
        }
        ArchParams::Sage {
            w_self1,
            w_neigh1,
            b1,
            w_self2,
            w_neigh2,
            b2,
        } => {
            let op = dense_mean_operator(ds);
            let z1 = x.dot(w_self1) + op.dot(&x.dot(w_neigh1));
            let h = relu(&add_bias(&z1, b1));
            let z2 = h.dot(w_self2) + op.dot(&h.dot(w_neigh2));
            let logits = add_bias(&z2, b2);
            (h, logits)
        }
        ArchParams::Gin { mlp1, mlp2 } => {
            let n = ds.node_count;
            let mut s = dense_adjacency(ds);
            for i in 0..n {
                s[(i, i)] += 1.0;
            }
            let mlp = |input: &Array2<f64>, p: &MlpParams| {
                let mid = relu(&add_bias(&input.dot(&p.w_in), &p.b_in));
                add_bias(&mid.dot(&p.w_out), &p.b_out)
            };
            let h = relu(&mlp(&s.dot(&x), mlp1));
            let logits = mlp(&s.dot(&h), mlp2);
            (h, logits)
        }
        ArchParams::Gat {
            w1,
            a_src1,
            a_dst1,
            b1,
            w2,
            a_src2,
            a_dst2,
            b2,
        } => {
            let layer = |input: &Array2<f64>,
                         w: &Array2<f64>,
                         a_src: &Array2<f64>,
                         a_dst: &Array2<f64>,
                         b: &Array2<f64>| {
                dense_gat_layer(ds, input, w, a_src, a_dst, b)
            };
            let h = relu(&layer(&x, w1, a_src1, a_dst1, b1));
            let logits = layer(&h, w2, a_src2, a_dst2, b2);
            (h, logits)
        }
    }
}

/// Single-head attention layer computed with per-node loops. The score of
/// edge j -> i is LeakyReLU(a_src . (W x_j) + a_dst . (W x_i)), softmaxed
/// over i's neighbours plus i itself.
fn dense_gat_layer(
    ds: &Dataset,
    input: &Array2<f64>,
    w: &Array2<f64>,
    a_src: &Array2<f64>,
    a_dst: &Array2<f64>,
    b: &Array2<f64>,
) -> Array2<f64> {
    let n = ds.node_count;
    let g = w.ncols();
    let hp = input.dot(w);
    let a = dense_adjacency(ds);
    let leaky = |v: f64| if v > 0.0 { v } else { GAT_LEAKY_SLOPE * v };
    let score_part = |node: usize, vec: &Array2<f64>| -> f64 {
        let mut acc = 0.0;
        for k in 0..g {
            acc += hp[(node, k)] * vec[(k, 0)];
        }
        acc
    };

    let mut out = Array2::zeros((n, g));
    for i in 0..n {
        let mut neigh: Vec<usize> = (0..n).filter(|&j| a[(i, j)] != 0.0).collect();
        neigh.push(i);
        neigh.sort_unstable();
        let scores: Vec<f64> = neigh
            .iter()
            .map(|&j| leaky(score_part(j, a_src) + score_part(i, a_dst)))
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (t, &j) in neigh.iter().enumerate() {
            let alpha = exps[t] / z;
            for k in 0..g {
                out[(i, k)] += alpha * hp[(j, k)];
            }
        }
        for k in 0..g {
            out[(i, k)] += b[(0, k)];
        }
    }
    out
}

/// Central finite difference of logit(target, class) with respect to
/// feature (node, i), evaluated through the ordinary full forward pass.
pub fn fd_gradient(
    model: &graft_core::nn::TrainedModel,
    features: &graft_core::sparse::SparseRowMatrix,
    node: usize,
    target: usize,
    class: usize,
    eps: f64,
) -> Vec<f64> {
    use graft_core::sparse::SparseRowMatrix;
    let d = features.cols();
    let mut out = vec![0.0; d];
    for i in 0..d {
        let mut plus: Vec<(usize, usize, f64)> = Vec::new();
        let mut minus: Vec<(usize, usize, f64)> = Vec::new();
        let mut seen = false;
        for (r, c, v) in features.iter() {
            if r == node && c == i {
                seen = true;
                plus.push((r, c, v + eps));
                minus.push((r, c, v - eps));
            } else {
                plus.push((r, c, v));
                minus.push((r, c, v));
            }
        }
        if !seen {
            plus.push((node, i, eps));
            minus.push((node, i, -eps));
        }
        let fp = SparseRowMatrix::from_triplets(features.rows(), d, plus).unwrap();
        let fm = SparseRowMatrix::from_triplets(features.rows(), d, minus).unwrap();
        let lp = model.logits(&fp)[(target, class)];
        let lm = model.logits(&fm)[(target, class)];
        out[i] = (lp - lm) / (2.0 * eps);
    }
    out
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// BFS hop distances from `start`; usize::MAX for unreachable nodes.
pub fn bfs_distances(ds: &Dataset, start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; ds.node_count];
    dist[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let (neigh, _) = ds.adjacency.row(u);
        for &v in neigh {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

pub const ALL_ARCHS: [Arch; 4] = [Arch::Gcn, Arch::Sage, Arch::Gin, Arch::Gat];
