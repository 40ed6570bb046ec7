use std::sync::Arc;

use crate::nn::params::Arch;
use crate::sparse::SparseRowMatrix;

/// Incoming edges per node for attention aggregation, self loop included.
/// Edge k runs src[k] -> dst[k]; edges are grouped by destination so that
/// offsets[i]..offsets[i+1] covers node i, sources ascending within a group.
#[derive(Debug, Clone)]
pub struct GatEdges {
    pub offsets: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl GatEdges {
    fn build(adjacency: &SparseRowMatrix) -> GatEdges {
        let n = adjacency.rows();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut src = Vec::with_capacity(adjacency.nnz() + n);
        let mut dst = Vec::with_capacity(adjacency.nnz() + n);
        offsets.push(0);
        for i in 0..n {
            let (neighbours, _) = adjacency.row(i);
            let pos = neighbours.partition_point(|&j| j < i);
            for &j in &neighbours[..pos] {
                src.push(j);
                dst.push(i);
            }
            src.push(i);
            dst.push(i);
            for &j in &neighbours[pos..] {
                src.push(j);
                dst.push(i);
            }
            offsets.push(src.len());
        }
        GatEdges { offsets, src, dst }
    }
}

/// Fixed aggregation operator of one architecture over one graph.
#[derive(Debug, Clone)]
pub enum ArchOps {
    /// Symmetrically normalised adjacency with self loops:
    /// D^-1/2 (A + I) D^-1/2.
    Gcn { norm: Arc<SparseRowMatrix> },
    /// Row-normalised neighbour mean D^-1 A (no self loops) and its
    /// transpose for column access.
    Sage {
        mean: Arc<SparseRowMatrix>,
        mean_t: Arc<SparseRowMatrix>,
    },
    /// Unnormalised sum with self loops: A + I.
    Gin { sum: Arc<SparseRowMatrix> },
    Gat { edges: Arc<GatEdges> },
}

impl ArchOps {
    pub fn build(arch: Arch, adjacency: &SparseRowMatrix) -> ArchOps {
        let n = adjacency.rows();
        match arch {
            Arch::Gcn => {
                let mut deg = vec![1.0f64; n];
                for i in 0..n {
                    deg[i] += adjacency.row(i).0.len() as f64;
                }
                let mut triplets = Vec::with_capacity(adjacency.nnz() + n);
                for i in 0..n {
                    triplets.push((i, i, 1.0 / deg[i]));
                    let (cols, _) = adjacency.row(i);
                    for &j in cols {
                        triplets.push((i, j, 1.0 / (deg[i] * deg[j]).sqrt()));
                    }
                }
                let norm = SparseRowMatrix::from_triplets(n, n, triplets)
                    .expect("normalised adjacency is well-formed");
                ArchOps::Gcn { norm: Arc::new(norm) }
            }
            Arch::Sage => {
                let mut triplets = Vec::with_capacity(adjacency.nnz());
                for i in 0..n {
                    let (cols, _) = adjacency.row(i);
                    if cols.is_empty() {
                        continue;
                    }
                    let w = 1.0 / cols.len() as f64;
                    for &j in cols {
                        triplets.push((i, j, w));
                    }
                }
                let mean = SparseRowMatrix::from_triplets(n, n, triplets)
                    .expect("mean adjacency is well-formed");
                let mean_t = mean.transpose();
                ArchOps::Sage {
                    mean: Arc::new(mean),
                    mean_t: Arc::new(mean_t),
                }
            }
            Arch::Gin => {
                let mut triplets = Vec::with_capacity(adjacency.nnz() + n);
                for i in 0..n {
                    triplets.push((i, i, 1.0));
                    let (cols, vals) = adjacency.row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        triplets.push((i, j, v));
                    }
                }
                let sum = SparseRowMatrix::from_triplets(n, n, triplets)
                    .expect("sum adjacency is well-formed");
                ArchOps::Gin { sum: Arc::new(sum) }
            }
            Arch::Gat => ArchOps::Gat {
                edges: Arc::new(GatEdges::build(adjacency)),
            },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            ArchOps::Gcn { .. } => Arch::Gcn,
            ArchOps::Sage { .. } => Arch::Sage,
            ArchOps::Gin { .. } => Arch::Gin,
            ArchOps::Gat { .. } => Arch::Gat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_adjacency;

    fn path3() -> SparseRowMatrix {
        // 0 - 1 - 2
        build_adjacency(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn gcn_norm_matches_hand_computation() {
        let ops = ArchOps::build(Arch::Gcn, &path3());
        let ArchOps::Gcn { norm } = ops else { panic!() };
        // Degrees with self loops: 2, 3, 2.
        assert!((norm.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((norm.get(0, 1) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(norm.get(0, 2), 0.0);
        assert!((norm.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((norm.get(1, 0) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sage_mean_rows_sum_to_one() {
        let ops = ArchOps::build(Arch::Sage, &path3());
        let ArchOps::Sage { mean, .. } = ops else { panic!() };
        for i in 0..3 {
            let s: f64 = mean.row(i).1.iter().sum();
            assert!((s - 1.0).abs() < 1e-15, "row {i} sums to {s}");
        }
        assert_eq!(mean.get(1, 0), 0.5);
        assert_eq!(mean.get(1, 2), 0.5);
        assert_eq!(mean.get(1, 1), 0.0);
    }

    #[test]
    fn gin_sum_adds_identity() {
        let ops = ArchOps::build(Arch::Gin, &path3());
        let ArchOps::Gin { sum } = ops else { panic!() };
        assert_eq!(sum.get(0, 0), 1.0);
        assert_eq!(sum.get(0, 1), 1.0);
        assert_eq!(sum.get(2, 2), 1.0);
        assert_eq!(sum.nnz(), 7);
    }

    #[test]
    fn gat_edges_are_grouped_and_sorted() {
        let ops = ArchOps::build(Arch::Gat, &path3());
        let ArchOps::Gat { edges } = ops else { panic!() };
        assert_eq!(edges.offsets, vec![0, 2, 5, 7]);
        assert_eq!(edges.src, vec![0, 1, 0, 1, 2, 1, 2]);
        assert_eq!(edges.dst, vec![0, 0, 1, 1, 1, 2, 2]);
    }
}
