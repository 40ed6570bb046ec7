//! Feature attribution for a scalar model output along the straight path
//! from an all-zero baseline to an input row.

use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};

/// A differentiable scalar function of one feature row, with everything
/// else (other nodes, parameters, the class under study) held fixed.
pub trait ScalarField {
    fn value(&self, row: &[f64]) -> f64;
    fn gradient(&self, row: &[f64]) -> Vec<f64>;
}

/// Quadrature rule for the path integral over alpha in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    GaussLegendre,
    RiemannMidpoint,
}

impl Quadrature {
    pub fn tag(&self) -> &'static str {
        match self {
            Quadrature::GaussLegendre => "gauss-legendre",
            Quadrature::RiemannMidpoint => "riemann-midpoint",
        }
    }

    pub fn parse(s: &str) -> Option<Quadrature> {
        match s {
            "gauss-legendre" => Some(Quadrature::GaussLegendre),
            "riemann-midpoint" => Some(Quadrature::RiemannMidpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionMethod {
    IntegratedGradients,
    GradTimesInput,
}

impl AttributionMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            AttributionMethod::IntegratedGradients => "integrated-gradients",
            AttributionMethod::GradTimesInput => "grad-times-input",
        }
    }

    pub fn parse(s: &str) -> Option<AttributionMethod> {
        match s {
            "integrated-gradients" => Some(AttributionMethod::IntegratedGradients),
            "grad-times-input" => Some(AttributionMethod::GradTimesInput),
            _ => None,
        }
    }
}

/// Nodes and weights integrating over [0, 1]. Gauss-Legendre nodes are the
/// Legendre roots mapped from [-1, 1]; midpoint nodes are (q + 1/2) / steps
/// with uniform weights.
pub fn quadrature_points(rule: Quadrature, steps: usize) -> Result<Vec<(f64, f64)>> {
    if steps == 0 {
        return Err(GraftError::InvalidInput(
            "quadrature needs at least one step".into(),
        ));
    }
    match rule {
        Quadrature::RiemannMidpoint => Ok((0..steps)
            .map(|q| ((q as f64 + 0.5) / steps as f64, 1.0 / steps as f64))
            .collect()),
        Quadrature::GaussLegendre => {
            let mut points = Vec::with_capacity(steps);
            let n = steps;
            for k in 0..n {
                // Chebyshev-based initial guess, then Newton on P_n.
                let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
                for _ in 0..100 {
                    let (p, dp) = legendre_with_derivative(n, x);
                    let dx = p / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        break;
                    }
                }
                let (_, dp) = legendre_with_derivative(n, x);
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                // Map from [-1, 1] to [0, 1].
                points.push(((x + 1.0) / 2.0, w / 2.0));
            }
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite quadrature nodes"));
            Ok(points)
        }
    }
}

/// P_n(x) and its derivative via the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Signed attribution of `row` under `method`. Integrated gradients scale
/// the input by each quadrature node, accumulate weighted gradients and
/// multiply elementwise by the input; grad-times-input is the single-point
/// variant at the input itself.
pub fn attribute(
    field: &dyn ScalarField,
    row: &[f64],
    method: AttributionMethod,
    steps: usize,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    match method {
        AttributionMethod::GradTimesInput => {
            let g = field.gradient(row);
            Ok(row.iter().zip(g).map(|(x, gi)| x * gi).collect())
        }
        AttributionMethod::IntegratedGradients => {
            let points = quadrature_points(rule, steps)?;
            let mut acc = vec![0.0; row.len()];
            let mut scaled = vec![0.0; row.len()];
            for (alpha, weight) in points {
                for (s, x) in scaled.iter_mut().zip(row) {
                    *s = alpha * x;
                }
                let g = field.gradient(&scaled);
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += weight * gi;
                }
            }
            Ok(row.iter().zip(acc).map(|(x, a)| x * a).collect())
        }
    }
}

/// Difference between the attribution total and the exact output gap
/// f(row) - f(0); near zero for converged quadratures of the true path
/// integral.
pub fn completeness_gap(field: &dyn ScalarField, row: &[f64], attribution: &[f64]) -> f64 {
    let sum: f64 = attribution.iter().sum();
    let fx = field.value(row);
    let f0 = field.value(&vec![0.0; row.len()]);
    sum - (fx - f0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cubic with a known closed-form path integral.
    struct Cubic;

    impl ScalarField for Cubic {
        fn value(&self, row: &[f64]) -> f64 {
            let (x, y) = (row[0], row[1]);
            x * x * x + 2.0 * x * y + 3.0 * y
        }
        fn gradient(&self, row: &[f64]) -> Vec<f64> {
            let (x, y) = (row[0], row[1]);
            vec![3.0 * x * x + 2.0 * y, 2.0 * x + 3.0]
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_one() {
        for steps in [1, 2, 3, 5, 10, 50] {
            let pts = quadrature_points(Quadrature::GaussLegendre, steps).unwrap();
            assert_eq!(pts.len(), steps);
            let total: f64 = pts.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12, "steps {steps}: {total}");
            assert!(pts.iter().all(|&(x, w)| x > 0.0 && x < 1.0 && w > 0.0));
            assert!(pts.windows(2).all(|p| p[0].0 < p[1].0));
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Degree 2n-1 polynomials integrate exactly; check x^5 over [0,1]
        // with 3 nodes: integral is 1/6.
        let pts = quadrature_points(Quadrature::GaussLegendre, 3).unwrap();
        let got: f64 = pts.iter().map(|&(x, w)| w * x.powi(5)).sum();
        assert!((got - 1.0 / 6.0).abs() < 1e-14, "{got}");
    }

    #[test]
    fn midpoint_matches_hand_rule() {
        let pts = quadrature_points(Quadrature::RiemannMidpoint, 4).unwrap();
        let want = [0.125, 0.375, 0.625, 0.875];
        for ((x, w), want_x) in pts.iter().zip(want) {
            assert!((x - want_x).abs() < 1e-15);
            assert_eq!(*w, 0.25);
        }
    }

    #[test]
    fn ig_on_cubic_matches_closed_form() {
        // For f(x,y) = x^3 + 2xy + 3y from a zero baseline along the straight
        // path: IG_x = x * int_0^1 (3 a^2 x^2 + 2 a y) da = x^3 + x y,
        // IG_y = y * int_0^1 (2 a x + 3) da = x y + 3 y.
        let row = [1.3f64, -0.7];
        let want = [
            row[0].powi(3) + row[0] * row[1],
            row[0] * row[1] + 3.0 * row[1],
        ];
        let got = attribute(
            &Cubic,
            &row,
            AttributionMethod::IntegratedGradients,
            5,
            Quadrature::GaussLegendre,
        )
        .unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        // The integrand is quadratic in alpha, so completeness is exact.
        let gap = completeness_gap(&Cubic, &row, &got);
        assert!(gap.abs() < 1e-12, "gap {gap}");
    }

    #[test]
    fn midpoint_converges_on_cubic() {
        let row = [0.9, 0.4];
        let coarse = attribute(
            &Cubic,
            &row,
            AttributionMethod::IntegratedGradients,
            4,
            Quadrature::RiemannMidpoint,
        )
        .unwrap();
        let fine = attribute(
            &Cubic,
            &row,
            AttributionMethod::IntegratedGradients,
            4096,
            Quadrature::RiemannMidpoint,
        )
        .unwrap();
        let gap_coarse = completeness_gap(&Cubic, &row, &coarse).abs();
        let gap_fine = completeness_gap(&Cubic, &row, &fine).abs();
        assert!(gap_fine < gap_coarse / 1000.0, "{gap_coarse} -> {gap_fine}");
    }

    #[test]
    fn grad_times_input_is_pointwise() {
        let row = [2.0, 1.0];
        let got = attribute(
            &Cubic,
            &row,
            AttributionMethod::GradTimesInput,
            1,
            Quadrature::GaussLegendre,
        )
        .unwrap();
        let g = Cubic.gradient(&row);
        assert_eq!(got, vec![row[0] * g[0], row[1] * g[1]]);
    }

    #[test]
    fn zero_steps_is_rejected() {
        assert!(quadrature_points(Quadrature::GaussLegendre, 0).is_err());
    }
}
