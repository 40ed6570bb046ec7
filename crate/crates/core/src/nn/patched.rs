//! Forward pass with one node's feature row replaced by a free variable.
//!
//! Attribution needs d(logit)/d(row) for many scaled copies of one row while
//! every other row stays fixed. Rebuilding the full input each time would
//! cost a dense n x d tape; instead the patched row enters layer 1 as a
//! rank-one update `base + col (x) (row . W)` where `base` folds the frozen
//! rows once per plan.

use std::sync::Arc;

use ndarray::Array2;

use crate::nn::forward::gat_layer;
use crate::nn::graph::ArchOps;
use crate::nn::params::ArchParams;
use crate::sparse::SparseRowMatrix;
use crate::tape::Tape;

enum PatchKind {
    Gcn {
        /// norm (X \ e) W1 + b1.
        base1: Array2<f64>,
        /// Column e of the normalised adjacency.
        a_col: Arc<Vec<f64>>,
    },
    Sage {
        /// (X \ e) W_self + mean (X \ e) W_neigh + b1.
        base1: Array2<f64>,
        self_col: Arc<Vec<f64>>,
        mean_col: Arc<Vec<f64>>,
    },
    Gin {
        /// sum (X \ e) W_in + b_in.
        base1: Array2<f64>,
        s_col: Arc<Vec<f64>>,
    },
    Gat {
        /// (X \ e) W1; the patched row re-enters before attention.
        base_h1: Array2<f64>,
        onehot: Arc<Vec<f64>>,
    },
}

/// Prepared patched forward for one (features, exemplar) pair.
pub struct PatchPlan<'m> {
    params: &'m ArchParams,
    ops: &'m ArchOps,
    exemplar: usize,
    feature_dim: usize,
    kind: PatchKind,
}

fn onehot(n: usize, e: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[e] = 1.0;
    v
}

/// base -= col (x) row.
fn subtract_outer(base: &mut Array2<f64>, col: &[f64], row: &[f64]) {
    for (i, &c) in col.iter().enumerate() {
        if c != 0.0 {
            let mut r = base.row_mut(i);
            for (j, &x) in row.iter().enumerate() {
                r[j] -= c * x;
            }
        }
    }
}

fn add_row_broadcast(base: &mut Array2<f64>, row: &Array2<f64>) {
    for mut r in base.rows_mut() {
        for j in 0..r.len() {
            r[j] += row[(0, j)];
        }
    }
}

impl<'m> PatchPlan<'m> {
    pub fn new(
        params: &'m ArchParams,
        ops: &'m ArchOps,
        features: &SparseRowMatrix,
        exemplar: usize,
    ) -> PatchPlan<'m> {
        assert!(exemplar < features.rows(), "exemplar out of range");
        let n = features.rows();
        let kind = match (params, ops) {
            (ArchParams::Gcn { w1, b1, .. }, ArchOps::Gcn { norm }) => {
                let xw = features.mul_dense(w1);
                let x_e_w: Vec<f64> = xw.row(exemplar).to_vec();
                let mut base1 = norm.mul_dense(&xw);
                let a_col = norm.row_dense(exemplar);
                subtract_outer(&mut base1, &a_col, &x_e_w);
                add_row_broadcast(&mut base1, b1);
                PatchKind::Gcn {
                    base1,
                    a_col: Arc::new(a_col),
                }
            }
            (
                ArchParams::Sage {
                    w_self1, w_neigh1, b1, ..
                },
                ArchOps::Sage { mean, mean_t },
            ) => {
                let xws = features.mul_dense(w_self1);
                let xwn = features.mul_dense(w_neigh1);
                let x_e_ws: Vec<f64> = xws.row(exemplar).to_vec();
                let x_e_wn: Vec<f64> = xwn.row(exemplar).to_vec();
                let mut base1 = xws + &mean.mul_dense(&xwn);
                let self_col = onehot(n, exemplar);
                let mean_col = mean_t.row_dense(exemplar);
                subtract_outer(&mut base1, &self_col, &x_e_ws);
                subtract_outer(&mut base1, &mean_col, &x_e_wn);
                add_row_broadcast(&mut base1, b1);
                PatchKind::Sage {
                    base1,
                    self_col: Arc::new(self_col),
                    mean_col: Arc::new(mean_col),
                }
            }
            (ArchParams::Gin { mlp1, .. }, ArchOps::Gin { sum }) => {
                let xw = features.mul_dense(&mlp1.w_in);
                let x_e_w: Vec<f64> = xw.row(exemplar).to_vec();
                let mut base1 = sum.mul_dense(&xw);
                let s_col = sum.row_dense(exemplar);
                subtract_outer(&mut base1, &s_col, &x_e_w);
                add_row_broadcast(&mut base1, &mlp1.b_in);
                PatchKind::Gin {
                    base1,
                    s_col: Arc::new(s_col),
                }
            }
            (ArchParams::Gat { w1, .. }, ArchOps::Gat { .. }) => {
                let mut base_h1 = features.mul_dense(w1);
                base_h1.row_mut(exemplar).fill(0.0);
                PatchKind::Gat {
                    base_h1,
                    onehot: Arc::new(onehot(n, exemplar)),
                }
            }
            _ => unreachable!("params and ops always share an architecture"),
        };
        PatchPlan {
            params,
            ops,
            exemplar,
            feature_dim: features.cols(),
            kind,
        }
    }

    pub fn exemplar(&self) -> usize {
        self.exemplar
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Logit of `class` at `target_node` when the exemplar's feature row is
    /// `row`, and optionally its gradient with respect to `row`.
    pub fn run(
        &self,
        row: &[f64],
        target_node: usize,
        class: usize,
        want_gradient: bool,
    ) -> (f64, Option<Vec<f64>>) {
        assert_eq!(row.len(), self.feature_dim, "patched row width mismatch");
        let mut t = Tape::new();
        let v = t.var(Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape"));

        let logits = match (&self.kind, self.params, self.ops) {
            (
                PatchKind::Gcn { base1, a_col },
                ArchParams::Gcn { w1, w2, b2, .. },
                ArchOps::Gcn { norm },
            ) => {
                let w1c = t.constant(w1.clone());
                let u = t.matmul(v, w1c);
                let basec = t.constant(base1.clone());
                let z1 = t.add_outer(basec, a_col.clone(), u);
                let h = t.relu(z1);
                let w2c = t.constant(w2.clone());
                let hw = t.matmul(h, w2c);
                let agg2 = t.spmm(norm.clone(), hw);
                let b2c = t.constant(b2.clone());
                t.add_row_vector(agg2, b2c)
            }
            (
                PatchKind::Sage {
                    base1,
                    self_col,
                    mean_col,
                },
                ArchParams::Sage {
                    w_self1,
                    w_neigh1,
                    w_self2,
                    w_neigh2,
                    b2,
                    ..
                },
                ArchOps::Sage { mean, .. },
            ) => {
                let wsc = t.constant(w_self1.clone());
                let wnc = t.constant(w_neigh1.clone());
                let u_self = t.matmul(v, wsc);
                let u_neigh = t.matmul(v, wnc);
                let basec = t.constant(base1.clone());
                let t1 = t.add_outer(basec, self_col.clone(), u_self);
                let z1 = t.add_outer(t1, mean_col.clone(), u_neigh);
                let h = t.relu(z1);
                let ws2c = t.constant(w_self2.clone());
                let wn2c = t.constant(w_neigh2.clone());
                let self2 = t.matmul(h, ws2c);
                let hw = t.matmul(h, wn2c);
                let neigh2 = t.spmm(mean.clone(), hw);
                let sum2 = t.add(self2, neigh2);
                let b2c = t.constant(b2.clone());
                t.add_row_vector(sum2, b2c)
            }
            (
                PatchKind::Gin { base1, s_col },
                ArchParams::Gin { mlp1, mlp2 },
                ArchOps::Gin { sum },
            ) => {
                let winc = t.constant(mlp1.w_in.clone());
                let u = t.matmul(v, winc);
                let basec = t.constant(base1.clone());
                let pre1 = t.add_outer(basec, s_col.clone(), u);
                let mid1 = t.relu(pre1);
                let woutc = t.constant(mlp1.w_out.clone());
                let mo1 = t.matmul(mid1, woutc);
                let bout1 = t.constant(mlp1.b_out.clone());
                let m1 = t.add_row_vector(mo1, bout1);
                let h = t.relu(m1);
                let win2 = t.constant(mlp2.w_in.clone());
                let hw = t.matmul(h, win2);
                let agg2 = t.spmm(sum.clone(), hw);
                let bin2 = t.constant(mlp2.b_in.clone());
                let pre2 = t.add_row_vector(agg2, bin2);
                let mid2 = t.relu(pre2);
                let wout2 = t.constant(mlp2.w_out.clone());
                let mo2 = t.matmul(mid2, wout2);
                let bout2 = t.constant(mlp2.b_out.clone());
                t.add_row_vector(mo2, bout2)
            }
            (
                PatchKind::Gat { base_h1, onehot },
                ArchParams::Gat {
                    w1,
                    a_src1,
                    a_dst1,
                    b1,
                    w2,
                    a_src2,
                    a_dst2,
                    b2,
                },
                ArchOps::Gat { edges },
            ) => {
                let w1c = t.constant(w1.clone());
                let u = t.matmul(v, w1c);
                let basec = t.constant(base_h1.clone());
                let hp1 = t.add_outer(basec, onehot.clone(), u);
                let as1 = t.constant(a_src1.clone());
                let ad1 = t.constant(a_dst1.clone());
                let b1c = t.constant(b1.clone());
                let z1 = gat_layer(&mut t, edges, hp1, as1, ad1, b1c);
                let h = t.relu(z1);
                let w2c = t.constant(w2.clone());
                let hp2 = t.matmul(h, w2c);
                let as2 = t.constant(a_src2.clone());
                let ad2 = t.constant(a_dst2.clone());
                let b2c = t.constant(b2.clone());
                gat_layer(&mut t, edges, hp2, as2, ad2, b2c)
            }
            _ => unreachable!("plan kind always matches params and ops"),
        };

        let out = t.pick(logits, target_node, class);
        let value = t.value(out)[(0, 0)];
        if !want_gradient {
            return (value, None);
        }
        let grads = t.backward(out);
        let g = match grads.get(v) {
            Some(g) => g.row(0).to_vec(),
            // The output can be flat in the patched row, e.g. fully dead
            // ReLUs; that is a genuine zero gradient.
            None => vec![0.0; self.feature_dim],
        };
        (value, Some(g))
    }
}
