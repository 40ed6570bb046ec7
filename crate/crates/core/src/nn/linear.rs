use ndarray::Array2;

use crate::attribution::ScalarField;

/// A linear decoder logit(x) = x . W + b with no message passing. Its path
/// integral from a zero baseline has the closed form x[i] * W[i, c], which
/// makes it an exact reference for attribution code.
#[derive(Debug, Clone)]
pub struct LinearDecoder {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl LinearDecoder {
    pub fn new(w: Array2<f64>, b: Array2<f64>) -> LinearDecoder {
        assert_eq!(b.nrows(), 1, "bias must be 1 x classes");
        assert_eq!(w.ncols(), b.ncols(), "bias width mismatch");
        LinearDecoder { w, b }
    }

    pub fn class_field(&self, class: usize) -> LinearClassField<'_> {
        assert!(class < self.w.ncols(), "class out of range");
        LinearClassField { model: self, class }
    }

    /// Exact straight-path attribution from a zero baseline.
    pub fn exact_attribution(&self, row: &[f64], class: usize) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, &x)| x * self.w[(i, class)])
            .collect()
    }
}

pub struct LinearClassField<'a> {
    model: &'a LinearDecoder,
    class: usize,
}

impl ScalarField for LinearClassField<'_> {
    fn value(&self, row: &[f64]) -> f64 {
        let mut acc = self.model.b[(0, self.class)];
        for (i, &x) in row.iter().enumerate() {
            acc += x * self.model.w[(i, self.class)];
        }
        acc
    }

    fn gradient(&self, row: &[f64]) -> Vec<f64> {
        (0..row.len()).map(|i| self.model.w[(i, self.class)]).collect()
    }
}
