use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};

/// Compressed sparse row matrix over f64, used for node features and
/// normalised adjacency operators. Explicit zeros are never stored and
/// column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRowMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRowMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets. Triplets may be
    /// unordered; zero values are dropped. Duplicate coordinates and
    /// out-of-range indices are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(GraftError::Shape(format!(
                    "triplet ({r}, {c}) out of bounds for {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(GraftError::InvalidInput(format!(
                    "non-finite value {v} at ({r}, {c})"
                )));
            }
            if v != 0.0 {
                entries.push((r, c, v));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(GraftError::InvalidInput(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseRowMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseRowMatrix {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Value at (r, c); 0.0 when the coordinate is not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// One row as a dense vector.
    pub fn row_dense(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        let (cols, vals) = self.row(r);
        for (c, v) in cols.iter().zip(vals) {
            out[*c] = *v;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(c, v)| (r, *c, *v))
        })
    }

    /// self * rhs for a dense rhs.
    pub fn mul_dense(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            self.cols,
            rhs.nrows(),
            "sparse-dense product dimension mismatch"
        );
        let k = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.rows, k));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let src = rhs.row(*c);
                let mut dst = out.row_mut(r);
                for j in 0..k {
                    dst[j] += v * src[j];
                }
            }
        }
        out
    }

    /// self^T * rhs for a dense rhs, without materialising the transpose.
    pub fn transpose_mul_dense(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            self.rows,
            rhs.nrows(),
            "transposed sparse-dense product dimension mismatch"
        );
        let k = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.cols, k));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let src = rhs.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let mut dst = out.row_mut(*c);
                for j in 0..k {
                    dst[j] += v * src[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseRowMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut cursor = counts;
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let slot = cursor[*c];
                col_indices[slot] = r;
                values[slot] = *v;
                cursor[*c] += 1;
            }
        }
        SparseRowMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.rows, self.cols));
        for (r, c, v) in self.iter() {
            out[(r, c)] = v;
        }
        out
    }

    /// Selects a subset of columns, remapping them to 0..selected.len().
    /// `selected` must be strictly increasing.
    pub fn select_columns(&self, selected: &[usize]) -> Result<SparseRowMatrix> {
        for w in selected.windows(2) {
            if w[0] >= w[1] {
                return Err(GraftError::InvalidInput(
                    "column selection must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = selected.last() {
            if last >= self.cols {
                return Err(GraftError::Shape(format!(
                    "selected column {last} out of range for {} columns",
                    self.cols
                )));
            }
        }
        let mut remap = vec![usize::MAX; self.cols];
        for (new, &old) in selected.iter().enumerate() {
            remap[old] = new;
        }
        let mut triplets = Vec::new();
        for (r, c, v) in self.iter() {
            if remap[c] != usize::MAX {
                triplets.push((r, remap[c], v));
            }
        }
        SparseRowMatrix::from_triplets(self.rows, selected.len(), triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> SparseRowMatrix {
        SparseRowMatrix::from_triplets(3, 4, vec![(0, 1, 2.0), (1, 0, -1.0), (1, 3, 4.0), (2, 2, 0.5)])
            .unwrap()
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(SparseRowMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseRowMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseRowMatrix::from_triplets(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn drops_explicit_zeros() {
        let m = SparseRowMatrix::from_triplets(2, 2, vec![(0, 0, 0.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 3.0);
    }

    #[test]
    fn dense_product_matches_dense_math() {
        let m = sample();
        let rhs = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let got = m.mul_dense(&rhs);
        let want = m.to_dense().dot(&rhs);
        assert_eq!(got, want);
    }

    #[test]
    fn transpose_round_trips() {
        let m = sample();
        let t = m.transpose();
        assert_eq!(t.to_dense(), m.to_dense().t().to_owned());
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn transpose_mul_matches_explicit_transpose() {
        let m = sample();
        let rhs = array![[1.0], [2.0], [3.0]];
        assert_eq!(m.transpose_mul_dense(&rhs), m.transpose().mul_dense(&rhs));
    }

    #[test]
    fn column_selection_remaps() {
        let m = sample();
        let s = m.select_columns(&[1, 3]).unwrap();
        assert_eq!(s.cols(), 2);
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(s.get(1, 1), 4.0);
        assert_eq!(s.get(2, 0), 0.0);
    }
}
