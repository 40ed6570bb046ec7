//! Class-level importance profiles aggregated from per-exemplar
//! attributions, their top-K summaries, and baseline profiles.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{GraftError, Result};
use crate::util::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    ConfWeighted,
    Median,
    Max,
}

impl Aggregation {
    pub fn tag(&self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::ConfWeighted => "conf-weighted",
            Aggregation::Median => "median",
            Aggregation::Max => "max",
        }
    }

    pub fn parse(s: &str) -> Option<Aggregation> {
        match s {
            "mean" => Some(Aggregation::Mean),
            "conf-weighted" => Some(Aggregation::ConfWeighted),
            "median" => Some(Aggregation::Median),
            "max" => Some(Aggregation::Max),
            _ => None,
        }
    }
}

/// One exemplar's signed attribution plus the model's confidence in the
/// profiled class at that exemplar.
#[derive(Debug, Clone)]
pub struct ExemplarAttribution {
    pub node: usize,
    pub attribution: Vec<f64>,
    pub confidence: f64,
}

/// Aggregated per-class profile over the full feature space.
#[derive(Debug, Clone)]
pub struct ClassProfile {
    pub class_id: usize,
    pub aggregation: Aggregation,
    /// Exemplars in selection order, as emitted.
    pub exemplars: Vec<usize>,
    /// Non-negative aggregated importance per feature.
    pub scores: Vec<f64>,
    /// Mean of the signed attributions per feature.
    pub signed_mean: Vec<f64>,
}

impl ClassProfile {
    pub fn aggregate_l1(&self) -> f64 {
        self.scores.iter().map(|v| v.abs()).sum()
    }

    pub fn signed_mean_sum(&self) -> f64 {
        self.signed_mean.iter().sum()
    }

    /// Top-K feature indices with scores; higher scores first, ties by
    /// ascending index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        top_k_indices(&self.scores, k)
    }
}

/// Aggregates signed exemplar attributions into a class profile.
///
/// Magnitudes |a| are aggregated; the signed mean is kept alongside.
/// Summation order is canonicalised by ascending exemplar node id so a
/// profile over a node set is a pure function of that set. Two exact
/// identities hold bitwise: a single exemplar yields its own |a| under
/// every mode, and uniform confidences make conf-weighted identical to
/// mean.
pub fn aggregate(
    class_id: usize,
    attributions: &[ExemplarAttribution],
    mode: Aggregation,
) -> Result<ClassProfile> {
    if attributions.is_empty() {
        return Err(GraftError::InvalidInput(format!(
            "class {class_id} has no exemplar attributions to aggregate"
        )));
    }
    let d = attributions[0].attribution.len();
    if attributions.iter().any(|a| a.attribution.len() != d) {
        return Err(GraftError::Shape(
            "exemplar attribution widths differ".into(),
        ));
    }

    let exemplars: Vec<usize> = attributions.iter().map(|a| a.node).collect();
    let mut ordered: Vec<&ExemplarAttribution> = attributions.iter().collect();
    ordered.sort_by_key(|a| a.node);

    let mut signed_mean = vec![0.0; d];
    for a in &ordered {
        for (s, v) in signed_mean.iter_mut().zip(&a.attribution) {
            *s += v;
        }
    }
    for s in &mut signed_mean {
        *s /= ordered.len() as f64;
    }

    let scores = if ordered.len() == 1 {
        ordered[0].attribution.iter().map(|v| v.abs()).collect()
    } else {
        match mode {
            Aggregation::Mean => mean_abs(&ordered),
            Aggregation::ConfWeighted => {
                let uniform = ordered
                    .windows(2)
                    .all(|w| w[0].confidence == w[1].confidence);
                if uniform {
                    mean_abs(&ordered)
                } else {
                    let total: f64 = ordered.iter().map(|a| a.confidence).sum();
                    if total <= 0.0 {
                        return Err(GraftError::InvalidInput(format!(
                            "class {class_id}: confidence weights sum to {total}"
                        )));
                    }
                    let mut acc = vec![0.0; d];
                    for a in &ordered {
                        for (s, v) in acc.iter_mut().zip(&a.attribution) {
                            *s += a.confidence * v.abs();
                        }
                    }
                    for s in &mut acc {
                        *s /= total;
                    }
                    acc
                }
            }
            Aggregation::Median => (0..d)
                .map(|i| {
                    let col: Vec<f64> = ordered.iter().map(|a| a.attribution[i].abs()).collect();
                    median(&col)
                })
                .collect(),
            Aggregation::Max => (0..d)
                .map(|i| {
                    ordered
                        .iter()
                        .map(|a| a.attribution[i].abs())
                        .fold(0.0, f64::max)
                })
                .collect(),
        }
    };

    Ok(ClassProfile {
        class_id,
        aggregation: mode,
        exemplars,
        scores,
        signed_mean,
    })
}

fn mean_abs(ordered: &[&ExemplarAttribution]) -> Vec<f64> {
    let d = ordered[0].attribution.len();
    let mut acc = vec![0.0; d];
    for a in ordered {
        for (s, v) in acc.iter_mut().zip(&a.attribution) {
            *s += v.abs();
        }
    }
    for s in &mut acc {
        *s /= ordered.len() as f64;
    }
    acc
}

/// Indices of the `k` largest scores, ties resolved toward the smaller
/// index; all indices when k exceeds the width.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

/// L1 distance between two equally wide profiles.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "profile widths differ");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Contrastive scores: each class's profile minus the mean of the others.
/// Returns an empty vector for fewer than two classes.
pub fn contrastive_scores(profiles: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let c = profiles.len();
    if c < 2 {
        return Vec::new();
    }
    let d = profiles[0].len();
    (0..c)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let others: f64 = (0..c).filter(|&k| k != i).map(|k| profiles[k][j]).sum();
                    profiles[i][j] - others / (c - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Occurrence counts of each feature among the class's training nodes; the
/// frequency baseline profile.
pub fn frequency_scores(ds: &Dataset, class: usize) -> Vec<f64> {
    let mut counts = vec![0.0; ds.feature_dim];
    for v in ds.class_split_nodes(class, Split::Train) {
        let (cols, vals) = ds.features.row(v);
        for (&c, &val) in cols.iter().zip(vals) {
            if val != 0.0 {
                counts[c] += 1.0;
            }
        }
    }
    counts
}

/// Seeded uniform choice of `k` distinct feature indices, ascending; the
/// random baseline "profile".
pub fn random_feature_set(feature_dim: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..feature_dim).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut out: Vec<usize> = idx.into_iter().take(k.min(feature_dim)).collect();
    out.sort_unstable();
    out
}

/// Serialised profile schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileJson {
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub class_id: usize,
    pub aggregation: String,
    pub attribution: AttributionMeta,
    pub exemplars: Vec<usize>,
    pub top_k: Vec<TopFeature>,
    pub aggregate_l1: f64,
    pub signed_mean_sum: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub method: String,
    pub steps: usize,
    pub quadrature: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopFeature {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(node: usize, attribution: Vec<f64>, confidence: f64) -> ExemplarAttribution {
        ExemplarAttribution {
            node,
            attribution,
            confidence,
        }
    }

    #[test]
    fn mean_aggregation_averages_magnitudes() {
        let p = aggregate(
            0,
            &[
                ex(1, vec![1.0, -2.0], 0.5),
                ex(0, vec![-3.0, 2.0], 0.5),
            ],
            Aggregation::Mean,
        )
        .unwrap();
        assert_eq!(p.scores, vec![2.0, 2.0]);
        assert_eq!(p.signed_mean, vec![-1.0, 0.0]);
        assert_eq!(p.exemplars, vec![1, 0], "selection order preserved");
        assert_eq!(p.aggregate_l1(), 4.0);
        assert_eq!(p.signed_mean_sum(), -1.0);
    }

    #[test]
    fn single_exemplar_is_identical_across_modes() {
        let a = vec![0.3, -0.1, 2.5];
        for mode in [
            Aggregation::Mean,
            Aggregation::ConfWeighted,
            Aggregation::Median,
            Aggregation::Max,
        ] {
            let p = aggregate(1, &[ex(4, a.clone(), 0.7)], mode).unwrap();
            let want: Vec<f64> = a.iter().map(|v| v.abs()).collect();
            assert_eq!(p.scores, want, "{mode:?}");
        }
    }

    #[test]
    fn uniform_confidence_weighting_equals_mean_bitwise() {
        let rows = [
            ex(2, vec![0.1, 0.7, -0.3], 1.0 / 3.0),
            ex(0, vec![-0.2, 0.5, 0.9], 1.0 / 3.0),
            ex(1, vec![0.4, -0.6, 0.2], 1.0 / 3.0),
        ];
        let mean = aggregate(0, &rows, Aggregation::Mean).unwrap();
        let cw = aggregate(0, &rows, Aggregation::ConfWeighted).unwrap();
        assert_eq!(mean.scores, cw.scores);
    }

    #[test]
    fn weighted_aggregation_prefers_confident_exemplars() {
        let rows = [
            ex(0, vec![1.0, 0.0], 0.9),
            ex(1, vec![0.0, 1.0], 0.1),
        ];
        let p = aggregate(0, &rows, Aggregation::ConfWeighted).unwrap();
        assert!((p.scores[0] - 0.9).abs() < 1e-15);
        assert!((p.scores[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn median_and_max_aggregate_per_coordinate() {
        let rows = [
            ex(0, vec![1.0, -5.0], 0.5),
            ex(1, vec![3.0, 1.0], 0.5),
            ex(2, vec![-2.0, 2.0], 0.5),
        ];
        let med = aggregate(0, &rows, Aggregation::Median).unwrap();
        assert_eq!(med.scores, vec![2.0, 2.0]);
        let max = aggregate(0, &rows, Aggregation::Max).unwrap();
        assert_eq!(max.scores, vec![3.0, 5.0]);
    }

    #[test]
    fn aggregation_is_order_invariant() {
        let fwd = [
            ex(0, vec![1.0, 0.25], 0.3),
            ex(5, vec![0.5, 0.125], 0.5),
            ex(9, vec![0.75, 2.0], 0.2),
        ];
        let rev: Vec<ExemplarAttribution> = fwd.iter().rev().cloned().collect();
        for mode in [Aggregation::Mean, Aggregation::ConfWeighted] {
            let a = aggregate(0, &fwd, mode).unwrap();
            let b = aggregate(0, &rev, mode).unwrap();
            assert_eq!(a.scores, b.scores, "{mode:?}");
            assert_eq!(a.signed_mean, b.signed_mean);
        }
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let scores = vec![0.5, 0.9, 0.5, 0.9, 0.1];
        let got = top_k_indices(&scores, 3);
        assert_eq!(got, vec![(1, 0.9), (3, 0.9), (0, 0.5)]);
        assert_eq!(top_k_indices(&scores, 99).len(), 5);
    }

    #[test]
    fn contrastive_scores_subtract_other_classes() {
        let profiles = vec![vec![3.0, 0.0], vec![1.0, 2.0], vec![1.0, 0.0]];
        let c = contrastive_scores(&profiles);
        assert_eq!(c[0], vec![2.0, -1.0]);
        assert_eq!(c[1], vec![-1.0, 2.0]);
    }

    #[test]
    fn random_feature_set_is_seeded() {
        let a = random_feature_set(50, 10, 3);
        let b = random_feature_set(50, 10, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_aggregation_is_an_error() {
        assert!(aggregate(0, &[], Aggregation::Mean).is_err());
    }
}
