use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{GraftError, Result};
use crate::sparse::SparseRowMatrix;

/// Parameters of a synthetic bias injection.
///
/// A new binary column is appended at index `feature_dim`; it fires with
/// probability 1 - sigma on nodes of the target class and with probability
/// sigma elsewhere. sigma = 0 yields a perfect class indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSpec {
    pub sigma: f64,
    pub target_class: usize,
    pub seed: u64,
}

/// Returns a copy of the dataset with the biased column appended. Existing
/// columns are untouched and the input dataset is not modified.
pub fn inject_bias(ds: &Dataset, spec: &BiasSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.sigma) || !spec.sigma.is_finite() {
        return Err(GraftError::InvalidInput(format!(
            "sigma must lie in [0, 1], got {}",
            spec.sigma
        )));
    }
    if spec.target_class >= ds.class_count {
        return Err(GraftError::InvalidInput(format!(
            "target class {} out of range for {} classes",
            spec.target_class, ds.class_count
        )));
    }

    let new_col = ds.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut triplets: Vec<(usize, usize, f64)> = ds.features.iter().collect();
    for v in 0..ds.node_count {
        let u: f64 = rng.gen();
        let fires = if ds.labels[v] == spec.target_class {
            u >= spec.sigma
        } else {
            u < spec.sigma
        };
        if fires {
            triplets.push((v, new_col, 1.0));
        }
    }
    let features = SparseRowMatrix::from_triplets(ds.node_count, new_col + 1, triplets)?;
    let feature_names = ds
        .feature_names
        .as_ref()
        .map(|names| {
            let mut out = names.clone();
            out.push("injected_bias".to_string());
            out
        });

    let mut out = ds.clone();
    out.feature_dim = new_col + 1;
    out.features = features;
    out.feature_names = feature_names;
    out.validate()?;
    Ok(out)
}
