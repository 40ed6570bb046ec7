//! Minimal reverse-accumulation gradient engine over dense f64 matrices.
//!
//! A [`Tape`] records a computation as it is built; values are computed
//! eagerly. [`Tape::backward`] then walks the recording in reverse and
//! accumulates adjoints. The op set is exactly what two-layer message-passing
//! networks and their training losses need; sparse operands enter as
//! captured constants so their gradients are never materialised.

use std::sync::Arc;

use ndarray::Array2;

use crate::sparse::SparseRowMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// mat * rhs with a constant sparse left operand.
    SpMM {
        mat: Arc<SparseRowMatrix>,
        rhs: Var,
    },
    Add(Var, Var),
    /// mat + row broadcast over rows; row is 1 x cols.
    AddRowVector {
        mat: Var,
        row: Var,
    },
    Relu(Var),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    /// base + col (x) u, with a constant column; base is n x h, col length n,
    /// u is 1 x h. Expresses a rank-one row patch without a dense tape.
    AddOuter {
        base: Var,
        col: Arc<Vec<f64>>,
        u: Var,
    },
    /// out[i, :] = src[idx[i], :].
    GatherRows {
        src: Var,
        idx: Arc<Vec<usize>>,
    },
    /// Softmax over contiguous row segments of an m x 1 score column.
    SegmentSoftmax {
        scores: Var,
        offsets: Arc<Vec<usize>>,
    },
    /// mat[i, :] * col[i] with col an m x 1 column.
    MulColBroadcast {
        mat: Var,
        col: Var,
    },
    /// out[s, :] = sum of mat rows in segment s.
    SegmentSum {
        mat: Var,
        offsets: Arc<Vec<usize>>,
    },
    /// 1 x 1 view of a single entry.
    Pick {
        src: Var,
        row: usize,
        col: usize,
    },
    /// Mean cross-entropy of softmaxed logits over a node mask; 1 x 1.
    MaskedCrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<usize>>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`; None when `v` does
    /// not require gradients or the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), req)
    }

    pub fn spmm(&mut self, mat: Arc<SparseRowMatrix>, rhs: Var) -> Var {
        let value = mat.mul_dense(self.value(rhs));
        let req = self.requires(rhs);
        self.push(value, Op::SpMM { mat, rhs }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), req)
    }

    pub fn add_row_vector(&mut self, mat: Var, row: Var) -> Var {
        let m = self.value(mat);
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "row operand must be 1 x cols");
        assert_eq!(m.ncols(), r.ncols(), "row broadcast width mismatch");
        let value = m + &r.row(0);
        let req = self.requires(mat) || self.requires(row);
        self.push(value, Op::AddRowVector { mat, row }, req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let req = self.requires(x);
        self.push(value, Op::Relu(x), req)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        let req = self.requires(x);
        self.push(value, Op::LeakyRelu { x, slope }, req)
    }

    pub fn add_outer(&mut self, base: Var, col: Arc<Vec<f64>>, u: Var) -> Var {
        let b = self.value(base);
        let uv = self.value(u);
        assert_eq!(uv.nrows(), 1, "outer operand must be 1 x h");
        assert_eq!(b.nrows(), col.len(), "outer column length mismatch");
        assert_eq!(b.ncols(), uv.ncols(), "outer width mismatch");
        let mut value = b.clone();
        for (i, &c) in col.iter().enumerate() {
            if c != 0.0 {
                let mut row = value.row_mut(i);
                for j in 0..row.len() {
                    row[j] += c * uv[(0, j)];
                }
            }
        }
        let req = self.requires(base) || self.requires(u);
        self.push(value, Op::AddOuter { base, col, u }, req)
    }

    pub fn gather_rows(&mut self, src: Var, idx: Arc<Vec<usize>>) -> Var {
        let s = self.value(src);
        let mut value = Array2::<f64>::zeros((idx.len(), s.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            value.row_mut(i).assign(&s.row(r));
        }
        let req = self.requires(src);
        self.push(value, Op::GatherRows { src, idx }, req)
    }

    pub fn segment_softmax(&mut self, scores: Var, offsets: Arc<Vec<usize>>) -> Var {
        let s = self.value(scores);
        assert_eq!(s.ncols(), 1, "segment softmax expects an m x 1 column");
        assert_eq!(
            *offsets.last().expect("offsets non-empty"),
            s.nrows(),
            "segment offsets must cover all rows"
        );
        let mut value = Array2::<f64>::zeros((s.nrows(), 1));
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                continue;
            }
            let mut max = f64::NEG_INFINITY;
            for i in lo..hi {
                max = max.max(s[(i, 0)]);
            }
            let mut z = 0.0;
            for i in lo..hi {
                let e = (s[(i, 0)] - max).exp();
                value[(i, 0)] = e;
                z += e;
            }
            for i in lo..hi {
                value[(i, 0)] /= z;
            }
        }
        let req = self.requires(scores);
        self.push(value, Op::SegmentSoftmax { scores, offsets }, req)
    }

    pub fn mul_col_broadcast(&mut self, mat: Var, col: Var) -> Var {
        let m = self.value(mat);
        let c = self.value(col);
        assert_eq!(c.ncols(), 1, "column operand must be m x 1");
        assert_eq!(m.nrows(), c.nrows(), "column broadcast height mismatch");
        let mut value = m.clone();
        for i in 0..value.nrows() {
            let k = c[(i, 0)];
            value.row_mut(i).mapv_inplace(|v| v * k);
        }
        let req = self.requires(mat) || self.requires(col);
        self.push(value, Op::MulColBroadcast { mat, col }, req)
    }

    pub fn segment_sum(&mut self, mat: Var, offsets: Arc<Vec<usize>>) -> Var {
        let m = self.value(mat);
        assert_eq!(
            *offsets.last().expect("offsets non-empty"),
            m.nrows(),
            "segment offsets must cover all rows"
        );
        let segments = offsets.len() - 1;
        let mut value = Array2::<f64>::zeros((segments, m.ncols()));
        for (s, w) in offsets.windows(2).enumerate() {
            for i in w[0]..w[1] {
                let src = m.row(i);
                let mut dst = value.row_mut(s);
                for j in 0..dst.len() {
                    dst[j] += src[j];
                }
            }
        }
        let req = self.requires(mat);
        self.push(value, Op::SegmentSum { mat, offsets }, req)
    }

    pub fn pick(&mut self, src: Var, row: usize, col: usize) -> Var {
        let v = self.value(src)[(row, col)];
        let req = self.requires(src);
        self.push(
            Array2::from_elem((1, 1), v),
            Op::Pick { src, row, col },
            req,
        )
    }

    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<usize>>,
    ) -> Var {
        let l = self.value(logits);
        assert!(!mask.is_empty(), "loss mask must be non-empty");
        assert_eq!(l.nrows(), labels.len(), "labels must cover logit rows");
        let mut total = 0.0;
        for &v in mask.iter() {
            total -= log_softmax_at(l, v, labels[v]);
        }
        let value = Array2::from_elem((1, 1), total / mask.len() as f64);
        let req = self.requires(logits);
        self.push(
            value,
            Op::MaskedCrossEntropy {
                logits,
                labels,
                mask,
            },
            req,
        )
    }

    /// Reverse pass from a scalar root. Adjoints accumulate only into nodes
    /// that require gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.requires(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.requires(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SpMM { mat, rhs } => {
                    if self.requires(*rhs) {
                        accumulate(&mut grads, *rhs, mat.transpose_mul_dense(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.requires(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::AddRowVector { mat, row } => {
                    if self.requires(*row) {
                        let mut gr = Array2::<f64>::zeros((1, g.ncols()));
                        for r in g.rows() {
                            for j in 0..g.ncols() {
                                gr[(0, j)] += r[j];
                            }
                        }
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.requires(*mat) {
                        accumulate(&mut grads, *mat, g);
                    }
                }
                Op::Relu(x) => {
                    if self.requires(*x) {
                        let out = &self.nodes[i].value;
                        let mut gx = g;
                        gx.zip_mut_with(out, |gv, &ov| {
                            if ov <= 0.0 {
                                *gv = 0.0;
                            }
                        });
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if self.requires(*x) {
                        let inp = self.value(*x);
                        let mut gx = g;
                        gx.zip_mut_with(inp, |gv, &iv| {
                            if iv <= 0.0 {
                                *gv *= slope;
                            }
                        });
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::AddOuter { base, col, u } => {
                    if self.requires(*u) {
                        let mut gu = Array2::<f64>::zeros((1, g.ncols()));
                        for (i0, &c) in col.iter().enumerate() {
                            if c != 0.0 {
                                let row = g.row(i0);
                                for j in 0..g.ncols() {
                                    gu[(0, j)] += c * row[j];
                                }
                            }
                        }
                        accumulate(&mut grads, *u, gu);
                    }
                    if self.requires(*base) {
                        accumulate(&mut grads, *base, g);
                    }
                }
                Op::GatherRows { src, idx } => {
                    if self.requires(*src) {
                        let s = self.value(*src);
                        let mut gs = Array2::<f64>::zeros(s.dim());
                        for (i0, &r) in idx.iter().enumerate() {
                            let row = g.row(i0);
                            let mut dst = gs.row_mut(r);
                            for j in 0..row.len() {
                                dst[j] += row[j];
                            }
                        }
                        accumulate(&mut grads, *src, gs);
                    }
                }
                Op::SegmentSoftmax { scores, offsets } => {
                    if self.requires(*scores) {
                        let alpha = &self.nodes[i].value;
                        let mut gs = Array2::<f64>::zeros(alpha.dim());
                        for w in offsets.windows(2) {
                            let (lo, hi) = (w[0], w[1]);
                            let mut dot = 0.0;
                            for r in lo..hi {
                                dot += alpha[(r, 0)] * g[(r, 0)];
                            }
                            for r in lo..hi {
                                gs[(r, 0)] = alpha[(r, 0)] * (g[(r, 0)] - dot);
                            }
                        }
                        accumulate(&mut grads, *scores, gs);
                    }
                }
                Op::MulColBroadcast { mat, col } => {
                    let m = self.value(*mat);
                    let c = self.value(*col);
                    if self.requires(*mat) {
                        let mut gm = g.clone();
                        for r in 0..gm.nrows() {
                            let k = c[(r, 0)];
                            gm.row_mut(r).mapv_inplace(|v| v * k);
                        }
                        accumulate(&mut grads, *mat, gm);
                    }
                    if self.requires(*col) {
                        let mut gc = Array2::<f64>::zeros((m.nrows(), 1));
                        for r in 0..m.nrows() {
                            let gr = g.row(r);
                            let mr = m.row(r);
                            let mut acc = 0.0;
                            for j in 0..gr.len() {
                                acc += gr[j] * mr[j];
                            }
                            gc[(r, 0)] = acc;
                        }
                        accumulate(&mut grads, *col, gc);
                    }
                }
                Op::SegmentSum { mat, offsets } => {
                    if self.requires(*mat) {
                        let m = self.value(*mat);
                        let mut gm = Array2::<f64>::zeros(m.dim());
                        for (s, w) in offsets.windows(2).enumerate() {
                            let src = g.row(s);
                            for r in w[0]..w[1] {
                                let mut dst = gm.row_mut(r);
                                for j in 0..src.len() {
                                    dst[j] += src[j];
                                }
                            }
                        }
                        accumulate(&mut grads, *mat, gm);
                    }
                }
                Op::Pick { src, row, col } => {
                    if self.requires(*src) {
                        let s = self.value(*src);
                        let mut gs = Array2::<f64>::zeros(s.dim());
                        gs[(*row, *col)] = g[(0, 0)];
                        accumulate(&mut grads, *src, gs);
                    }
                }
                Op::MaskedCrossEntropy {
                    logits,
                    labels,
                    mask,
                } => {
                    if self.requires(*logits) {
                        let l = self.value(*logits);
                        let scale = g[(0, 0)] / mask.len() as f64;
                        let mut gl = Array2::<f64>::zeros(l.dim());
                        for &v in mask.iter() {
                            let p = softmax_row(l, v);
                            for (j, pj) in p.iter().enumerate() {
                                gl[(v, j)] += scale * pj;
                            }
                            gl[(v, labels[v])] -= scale;
                        }
                        accumulate(&mut grads, *logits, gl);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn softmax_row(logits: &Array2<f64>, row: usize) -> Vec<f64> {
    let r = logits.row(row);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = r.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

fn log_softmax_at(logits: &Array2<f64>, row: usize, col: usize) -> f64 {
    let r = logits.row(row);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = r.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[(row, col)] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    struct Leaves {
        w: Array2<f64>,
        b: Array2<f64>,
        base: Array2<f64>,
        u: Array2<f64>,
        a_vec: Array2<f64>,
        w2: Array2<f64>,
    }

    impl Leaves {
        fn sample(seed: u64) -> Leaves {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Leaves {
                w: rand_matrix(&mut rng, 3, 2),
                b: rand_matrix(&mut rng, 1, 2),
                base: rand_matrix(&mut rng, 4, 2),
                u: rand_matrix(&mut rng, 1, 2),
                a_vec: rand_matrix(&mut rng, 2, 1),
                w2: rand_matrix(&mut rng, 2, 3),
            }
        }

        fn slots(&mut self) -> Vec<&mut Array2<f64>> {
            vec![
                &mut self.w,
                &mut self.b,
                &mut self.base,
                &mut self.u,
                &mut self.a_vec,
                &mut self.w2,
            ]
        }
    }

    /// Composite graph covering every op; returns the tape, the leaf vars in
    /// slot order, and the scalar root.
    fn build(leaves: &Leaves) -> (Tape, Vec<Var>, Var) {
        let x = Arc::new(
            SparseRowMatrix::from_triplets(
                4,
                3,
                vec![
                    (0, 0, 1.0),
                    (0, 2, -0.5),
                    (1, 1, 2.0),
                    (2, 0, 0.7),
                    (2, 2, 1.3),
                    (3, 1, -1.1),
                ],
            )
            .unwrap(),
        );
        let mut t = Tape::new();
        let w = t.var(leaves.w.clone());
        let b = t.var(leaves.b.clone());
        let base = t.var(leaves.base.clone());
        let u = t.var(leaves.u.clone());
        let a_vec = t.var(leaves.a_vec.clone());
        let w2 = t.var(leaves.w2.clone());

        let z1 = t.spmm(x, w);
        let z1b = t.add_row_vector(z1, b);
        let h = t.relu(z1b);
        let hl = t.leaky_relu(z1b, 0.2);
        let hh = t.add(h, hl);
        let col = Arc::new(vec![0.5, 0.0, -1.0, 2.0]);
        let patched = t.add_outer(base, col, u);
        let m = t.add(hh, patched);

        let idx = Arc::new(vec![0usize, 2, 2, 3, 1]);
        let gathered = t.gather_rows(m, idx);
        let scores = t.matmul(gathered, a_vec);
        let offsets = Arc::new(vec![0usize, 2, 2, 5]);
        let alpha = t.segment_softmax(scores, offsets.clone());
        let weighted = t.mul_col_broadcast(gathered, alpha);
        let agg = t.segment_sum(weighted, offsets);

        let logits = t.matmul(agg, w2);
        let labels = Arc::new(vec![0usize, 2, 1]);
        let mask = Arc::new(vec![0usize, 2]);
        let loss = t.masked_cross_entropy(logits, labels, mask);
        let picked = t.pick(logits, 1, 2);
        let root = t.add(loss, picked);
        (t, vec![w, b, base, u, a_vec, w2], root)
    }

    fn eval(leaves: &Leaves) -> f64 {
        let (t, _, root) = build(leaves);
        t.value(root)[(0, 0)]
    }

    #[test]
    fn composite_graph_matches_central_differences() {
        let leaves = Leaves::sample(11);
        let (t, vars, root) = build(&leaves);
        let grads = t.backward(root);

        let eps = 1e-6;
        for slot in 0..6 {
            let shape = {
                let mut probe = Leaves::sample(11);
                probe.slots()[slot].dim()
            };
            let analytic = grads.get(vars[slot]).expect("leaf gradient").clone();
            assert_eq!(analytic.dim(), shape);
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let mut plus = Leaves::sample(11);
                    plus.slots()[slot][(r, c)] += eps;
                    let mut minus = Leaves::sample(11);
                    minus.slots()[slot][(r, c)] -= eps;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                    let got = analytic[(r, c)];
                    let tol = 1e-6 * fd.abs().max(1.0);
                    assert!(
                        (got - fd).abs() <= tol,
                        "slot {slot} ({r}, {c}): analytic {got} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn reused_nodes_accumulate() {
        let mut t = Tape::new();
        let x = t.var(Array2::from_elem((1, 1), 3.0));
        let y = t.add(x, x);
        let root = t.pick(y, 0, 0);
        let grads = t.backward(root);
        assert_eq!(grads.get(x).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.var(Array2::from_elem((1, 2), 1.0));
        let c = t.constant(Array2::from_elem((2, 1), 4.0));
        let y = t.matmul(x, c);
        let root = t.pick(y, 0, 0);
        let grads = t.backward(root);
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn masked_cross_entropy_matches_manual_value() {
        let mut t = Tape::new();
        let logits = t.var(Array2::from_shape_vec((2, 2), vec![2.0, 0.0, -1.0, 1.5]).unwrap());
        let loss = t.masked_cross_entropy(
            logits,
            Arc::new(vec![0usize, 1]),
            Arc::new(vec![0usize, 1]),
        );
        let want_row0 = -(2.0f64) + (2.0f64.exp() + 1.0).ln();
        let want_row1 = -(1.5f64) + ((-1.0f64).exp() + 1.5f64.exp()).ln();
        let want = 0.5 * (want_row0 + want_row1);
        assert!((t.value(loss)[(0, 0)] - want).abs() < 1e-12);
    }
}
