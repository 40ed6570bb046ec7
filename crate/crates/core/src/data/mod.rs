mod bias;
mod io;
mod planted;

pub use bias::{inject_bias, BiasSpec};
pub use io::{load_dataset, save_dataset};
pub use planted::{generate_planted, validate_spec, PlantedDataset, PlantedSpec};

use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::sparse::SparseRowMatrix;

/// Partition a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// An attributed graph with node labels and a fixed train/val/test split.
///
/// The adjacency is undirected: it is stored symmetrically, carries no self
/// loops, and all stored values are 1.0. Features are non-negative in the
/// bundles this crate ships, but the type does not require it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub node_count: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub features: SparseRowMatrix,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub adjacency: SparseRowMatrix,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Assembles and validates a dataset from parts. `edges` are undirected
    /// pairs; they may appear in either orientation but not duplicated.
    pub fn new(
        name: impl Into<String>,
        feature_dim: usize,
        class_count: usize,
        features: SparseRowMatrix,
        labels: Vec<usize>,
        splits: Vec<Split>,
        edges: &[(usize, usize)],
        feature_names: Option<Vec<String>>,
    ) -> Result<Dataset> {
        let node_count = labels.len();
        let adjacency = build_adjacency(node_count, edges)?;
        let ds = Dataset {
            name: name.into(),
            node_count,
            feature_dim,
            class_count,
            features,
            labels,
            splits,
            adjacency,
            feature_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(GraftError::InvalidInput("dataset has no nodes".into()));
        }
        if self.labels.len() != self.node_count || self.splits.len() != self.node_count {
            return Err(GraftError::Shape(format!(
                "labels ({}) and splits ({}) must both cover {} nodes",
                self.labels.len(),
                self.splits.len(),
                self.node_count
            )));
        }
        if self.features.rows() != self.node_count || self.features.cols() != self.feature_dim {
            return Err(GraftError::Shape(format!(
                "feature matrix is {}x{}, expected {}x{}",
                self.features.rows(),
                self.features.cols(),
                self.node_count,
                self.feature_dim
            )));
        }
        if self.adjacency.rows() != self.node_count || self.adjacency.cols() != self.node_count {
            return Err(GraftError::Shape("adjacency must be square over nodes".into()));
        }
        if self.class_count == 0 {
            return Err(GraftError::InvalidInput("class count must be positive".into()));
        }
        for (v, &y) in self.labels.iter().enumerate() {
            if y >= self.class_count {
                return Err(GraftError::InvalidInput(format!(
                    "label {y} of node {v} exceeds class count {}",
                    self.class_count
                )));
            }
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.feature_dim {
                return Err(GraftError::Shape(format!(
                    "{} feature names for feature dim {}",
                    names.len(),
                    self.feature_dim
                )));
            }
        }
        // Adjacency must be symmetric with unit weights and no self loops.
        for (u, v, w) in self.adjacency.iter() {
            if u == v {
                return Err(GraftError::InvalidInput(format!("self-loop at node {u}")));
            }
            if w != 1.0 {
                return Err(GraftError::InvalidInput(format!(
                    "adjacency weight {w} at ({u}, {v}); expected 1.0"
                )));
            }
            if self.adjacency.get(v, u) != 1.0 {
                return Err(GraftError::InvalidInput(format!(
                    "edge ({u}, {v}) is not mirrored"
                )));
            }
        }
        // Every class needs at least one training node so the loss is defined
        // for it and class centroids exist downstream.
        let mut train_per_class = vec![0usize; self.class_count];
        for (v, &y) in self.labels.iter().enumerate() {
            if self.splits[v] == Split::Train {
                train_per_class[y] += 1;
            }
        }
        if let Some(c) = train_per_class.iter().position(|&n| n == 0) {
            return Err(GraftError::InvalidInput(format!(
                "class {c} has no training node"
            )));
        }
        Ok(())
    }

    /// Undirected edges in canonical (min, max) order, ascending.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.adjacency.nnz() / 2);
        for u in 0..self.node_count {
            let (cols, _) = self.adjacency.row(u);
            for &v in cols {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Node ids belonging to a split, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.splits[v] == split).collect()
    }

    /// Node ids with ground-truth label `class`, ascending.
    pub fn class_nodes(&self, class: usize) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.labels[v] == class).collect()
    }

    /// Node ids with label `class` inside `split`, ascending.
    pub fn class_split_nodes(&self, class: usize, split: Split) -> Vec<usize> {
        (0..self.node_count)
            .filter(|&v| self.labels[v] == class && self.splits[v] == split)
            .collect()
    }

    /// Display name for a feature column, falling back to `word_<index>`.
    pub fn feature_name(&self, index: usize) -> String {
        match &self.feature_names {
            Some(names) if index < names.len() => names[index].clone(),
            _ => format!("word_{index}"),
        }
    }
}

/// Builds a symmetric unit-weight CSR adjacency from undirected edges.
/// Edges are canonicalised to (min, max) and deduplicated; self loops and
/// out-of-range endpoints are rejected.
pub(crate) fn build_adjacency(node_count: usize, edges: &[(usize, usize)]) -> Result<SparseRowMatrix> {
    let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= node_count || b >= node_count {
            return Err(GraftError::InvalidInput(format!(
                "edge ({a}, {b}): endpoint out of range for {node_count} nodes"
            )));
        }
        if a == b {
            return Err(GraftError::InvalidInput(format!("edge ({a}, {b}) is a self-loop")));
        }
        canonical.push((a.min(b), a.max(b)));
    }
    canonical.sort_unstable();
    canonical.dedup();
    let mut triplets = Vec::with_capacity(canonical.len() * 2);
    for (u, v) in canonical {
        triplets.push((u, v, 1.0));
        triplets.push((v, u, 1.0));
    }
    SparseRowMatrix::from_triplets(node_count, node_count, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let features = SparseRowMatrix::from_triplets(
            4,
            3,
            vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 0, 1.0)],
        )
        .unwrap();
        Dataset::new(
            "tiny",
            3,
            2,
            features,
            vec![0, 1, 0, 1],
            vec![Split::Train, Split::Train, Split::Test, Split::Val],
            &[(0, 1), (1, 2), (2, 3)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn adjacency_is_symmetric_and_deduplicated() {
        let adj = build_adjacency(3, &[(0, 1), (1, 0), (2, 1)]).unwrap();
        assert_eq!(adj.nnz(), 4);
        assert_eq!(adj.get(0, 1), 1.0);
        assert_eq!(adj.get(1, 0), 1.0);
        assert_eq!(adj.get(1, 2), 1.0);
    }

    #[test]
    fn rejects_self_loops_and_bad_endpoints() {
        assert!(build_adjacency(3, &[(1, 1)]).is_err());
        let err = build_adjacency(5, &[(0, 9)]).unwrap_err();
        assert!(err.to_string().contains("endpoint out of range"));
    }

    #[test]
    fn class_queries_are_sorted() {
        let ds = tiny();
        assert_eq!(ds.class_nodes(0), vec![0, 2]);
        assert_eq!(ds.split_nodes(Split::Train), vec![0, 1]);
        assert_eq!(ds.class_split_nodes(0, Split::Test), vec![2]);
        assert_eq!(ds.canonical_edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn missing_train_class_is_rejected() {
        let features = SparseRowMatrix::zeros(2, 1);
        let got = Dataset::new(
            "bad",
            1,
            2,
            features,
            vec![0, 1],
            vec![Split::Train, Split::Test],
            &[(0, 1)],
            None,
        );
        assert!(got.unwrap_err().to_string().contains("no training node"));
    }

    #[test]
    fn feature_name_fallback() {
        let ds = tiny();
        assert_eq!(ds.feature_name(2), "word_2");
    }
}
