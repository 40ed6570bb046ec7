//! Exemplar selection in embedding space.
//!
//! Farthest-point sampling seeds at the candidate closest to the candidate
//! centroid, then greedily adds the candidate farthest from the selected
//! set. All argmin/argmax ties resolve toward the lowest node id, which
//! keeps selection deterministic without any randomness.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExemplarMode {
    Fps,
    CsFps,
    Random,
}

impl ExemplarMode {
    pub fn tag(&self) -> &'static str {
        match self {
            ExemplarMode::Fps => "fps",
            ExemplarMode::CsFps => "cs-fps",
            ExemplarMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<ExemplarMode> {
        match s {
            "fps" => Some(ExemplarMode::Fps),
            "cs-fps" => Some(ExemplarMode::CsFps),
            "random" => Some(ExemplarMode::Random),
            _ => None,
        }
    }
}

fn euclidean(embeddings: &Array2<f64>, a: usize, b: usize) -> f64 {
    let ra = embeddings.row(a);
    let rb = embeddings.row(b);
    ra.iter()
        .zip(rb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Farthest-point sampling of up to `k` candidates. When the candidate set
/// is no larger than `k`, every candidate is returned in ascending order.
pub fn select_fps(embeddings: &Array2<f64>, candidates: &[usize], k: usize) -> Vec<usize> {
    if candidates.len() <= k {
        let mut all = candidates.to_vec();
        all.sort_unstable();
        return all;
    }
    if k == 0 {
        return Vec::new();
    }

    let dim = embeddings.ncols();
    let mut centroid = vec![0.0; dim];
    for &v in candidates {
        for (j, c) in centroid.iter_mut().enumerate() {
            *c += embeddings[(v, j)];
        }
    }
    for c in &mut centroid {
        *c /= candidates.len() as f64;
    }

    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();

    // Seed: candidate nearest the centroid, lowest id on ties.
    let mut seed = sorted[0];
    let mut best = f64::INFINITY;
    for &v in &sorted {
        let d = (0..dim)
            .map(|j| (embeddings[(v, j)] - centroid[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        if d < best {
            best = d;
            seed = v;
        }
    }

    let mut selected = vec![seed];
    // min_dist[i] tracks each candidate's distance to the selected set.
    let mut min_dist: Vec<f64> = sorted
        .iter()
        .map(|&v| euclidean(embeddings, v, seed))
        .collect();

    while selected.len() < k {
        let mut next = None;
        let mut far = f64::NEG_INFINITY;
        for (i, &v) in sorted.iter().enumerate() {
            if selected.contains(&v) {
                continue;
            }
            if min_dist[i] > far {
                far = min_dist[i];
                next = Some((i, v));
            }
        }
        let (_, v) = next.expect("candidates remain while selected < k < len");
        selected.push(v);
        for (i, &u) in sorted.iter().enumerate() {
            let d = euclidean(embeddings, u, v);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    selected
}

/// Confidence-stratified variant: candidates strictly above the median
/// confidence form a high stratum that receives ceil(k/2) slots, the rest
/// go to the low stratum; unfilled budget spills over. Output lists the
/// high-stratum exemplars first.
pub fn select_cs_fps(
    embeddings: &Array2<f64>,
    candidates: &[usize],
    confidences: &[f64],
    k: usize,
) -> Vec<usize> {
    if candidates.len() <= k {
        let mut all = candidates.to_vec();
        all.sort_unstable();
        return all;
    }
    let values: Vec<f64> = candidates.iter().map(|&v| confidences[v]).collect();
    let m = median(&values);
    let mut high = Vec::new();
    let mut low = Vec::new();
    for &v in candidates {
        if confidences[v] > m {
            high.push(v);
        } else {
            low.push(v);
        }
    }

    let mut k_high = k.div_ceil(2).min(high.len());
    let mut k_low = (k - k_high).min(low.len());
    // Spill unused budget to the other stratum.
    k_high = (k - k_low).min(high.len());
    k_low = (k - k_high).min(low.len());

    let mut out = select_fps(embeddings, &high, k_high);
    out.extend(select_fps(embeddings, &low, k_low));
    out
}

/// Seeded uniform sample without replacement, ascending.
pub fn select_random(candidates: &[usize], k: usize, seed: u64) -> Vec<usize> {
    if candidates.len() <= k {
        let mut all = candidates.to_vec();
        all.sort_unstable();
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.shuffle(&mut rng);
    let mut out: Vec<usize> = pool.into_iter().take(k).collect();
    out.sort_unstable();
    out
}

/// max over candidates of the distance to the nearest selected point; the
/// k-center objective the greedy strategy approximates.
pub fn coverage_radius(embeddings: &Array2<f64>, candidates: &[usize], selected: &[usize]) -> f64 {
    candidates
        .iter()
        .map(|&v| {
            selected
                .iter()
                .map(|&e| euclidean(embeddings, v, e))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}
