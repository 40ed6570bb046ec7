use std::sync::Arc;

use ndarray::Array2;

use crate::nn::graph::{ArchOps, GatEdges};
use crate::nn::params::ArchParams;
use crate::sparse::SparseRowMatrix;
use crate::tape::{Tape, Var};

/// Handles into a recorded full-graph forward pass.
pub struct ForwardGraph {
    /// Parameter vars in [`ArchParams::tensors`] order; empty when the pass
    /// was built with constant parameters.
    pub param_vars: Vec<Var>,
    /// Layer-1 output after the ReLU; the embedding space used downstream.
    pub embedding: Var,
    pub logits: Var,
}

/// Negative slope of the attention non-linearity.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Records the full forward pass of a model on `features`. With
/// `trainable`, parameters enter as differentiable leaves; otherwise they
/// are constants and the tape is evaluation-only.
pub fn build_forward(
    tape: &mut Tape,
    params: &ArchParams,
    ops: &ArchOps,
    features: &Arc<SparseRowMatrix>,
    trainable: bool,
) -> ForwardGraph {
    let mut param_vars = Vec::new();
    {
        let tensors = params.tensors();
        for (_, t) in &tensors {
            let leaf = if trainable {
                tape.var((*t).clone())
            } else {
                tape.constant((*t).clone())
            };
            param_vars.push(leaf);
        }
    }
    let p = &param_vars;

    let (embedding, logits) = match (params, ops) {
        (ArchParams::Gcn { .. }, ArchOps::Gcn { norm }) => {
            let (w1, b1, w2, b2) = (p[0], p[1], p[2], p[3]);
            let xw = tape.spmm(features.clone(), w1);
            let agg1 = tape.spmm(norm.clone(), xw);
            let z1 = tape.add_row_vector(agg1, b1);
            let h = tape.relu(z1);
            let hw = tape.matmul(h, w2);
            let agg2 = tape.spmm(norm.clone(), hw);
            let logits = tape.add_row_vector(agg2, b2);
            (h, logits)
        }
        (ArchParams::Sage { .. }, ArchOps::Sage { mean, .. }) => {
            let (w_self1, w_neigh1, b1) = (p[0], p[1], p[2]);
            let (w_self2, w_neigh2, b2) = (p[3], p[4], p[5]);
            let self1 = tape.spmm(features.clone(), w_self1);
            let xw = tape.spmm(features.clone(), w_neigh1);
            let neigh1 = tape.spmm(mean.clone(), xw);
            let sum1 = tape.add(self1, neigh1);
            let z1 = tape.add_row_vector(sum1, b1);
            let h = tape.relu(z1);
            let self2 = tape.matmul(h, w_self2);
            let hw = tape.matmul(h, w_neigh2);
            let neigh2 = tape.spmm(mean.clone(), hw);
            let sum2 = tape.add(self2, neigh2);
            let logits = tape.add_row_vector(sum2, b2);
            (h, logits)
        }
        (ArchParams::Gin { .. }, ArchOps::Gin { sum }) => {
            let (w_in1, b_in1, w_out1, b_out1) = (p[0], p[1], p[2], p[3]);
            let (w_in2, b_in2, w_out2, b_out2) = (p[4], p[5], p[6], p[7]);
            let xw = tape.spmm(features.clone(), w_in1);
            let agg1 = tape.spmm(sum.clone(), xw);
            let pre1 = tape.add_row_vector(agg1, b_in1);
            let mid1 = tape.relu(pre1);
            let mo1 = tape.matmul(mid1, w_out1);
            let m1 = tape.add_row_vector(mo1, b_out1);
            let h = tape.relu(m1);
            let hw = tape.matmul(h, w_in2);
            let agg2 = tape.spmm(sum.clone(), hw);
            let pre2 = tape.add_row_vector(agg2, b_in2);
            let mid2 = tape.relu(pre2);
            let mo2 = tape.matmul(mid2, w_out2);
            let logits = tape.add_row_vector(mo2, b_out2);
            (h, logits)
        }
        (ArchParams::Gat { .. }, ArchOps::Gat { edges }) => {
            let (w1, a_src1, a_dst1, b1) = (p[0], p[1], p[2], p[3]);
            let (w2, a_src2, a_dst2, b2) = (p[4], p[5], p[6], p[7]);
            let hp1 = tape.spmm(features.clone(), w1);
            let z1 = gat_layer(tape, edges, hp1, a_src1, a_dst1, b1);
            let h = tape.relu(z1);
            let hp2 = tape.matmul(h, w2);
            let logits = gat_layer(tape, edges, hp2, a_src2, a_dst2, b2);
            (h, logits)
        }
        _ => unreachable!("params and ops always share an architecture"),
    };

    ForwardGraph {
        param_vars: if trainable { param_vars } else { Vec::new() },
        embedding,
        logits,
    }
}

/// Single-head attention aggregation over `edges` of already-transformed
/// node states `hp`. The score of edge j -> i is
/// LeakyReLU(a_src . hp[j] + a_dst . hp[i]), softmaxed over the in-edges of
/// i (self loop included).
pub fn gat_layer(
    tape: &mut Tape,
    edges: &Arc<GatEdges>,
    hp: Var,
    a_src: Var,
    a_dst: Var,
    bias: Var,
) -> Var {
    let src = Arc::new(edges.src.clone());
    let dst = Arc::new(edges.dst.clone());
    let offsets = Arc::new(edges.offsets.clone());

    let s_src = tape.matmul(hp, a_src);
    let s_dst = tape.matmul(hp, a_dst);
    let e_src = tape.gather_rows(s_src, src.clone());
    let e_dst = tape.gather_rows(s_dst, dst);
    let e_sum = tape.add(e_src, e_dst);
    let scores = tape.leaky_relu(e_sum, GAT_LEAKY_SLOPE);
    let alpha = tape.segment_softmax(scores, offsets.clone());
    let h_src = tape.gather_rows(hp, src);
    let weighted = tape.mul_col_broadcast(h_src, alpha);
    let agg = tape.segment_sum(weighted, offsets);
    tape.add_row_vector(agg, bias)
}

/// Evaluation-only forward pass; returns (embeddings, logits).
pub fn evaluate(
    params: &ArchParams,
    ops: &ArchOps,
    features: &SparseRowMatrix,
) -> (Array2<f64>, Array2<f64>) {
    let mut tape = Tape::new();
    let features = Arc::new(features.clone());
    let fg = build_forward(&mut tape, params, ops, &features, false);
    (
        tape.value(fg.embedding).clone(),
        tape.value(fg.logits).clone(),
    )
}
