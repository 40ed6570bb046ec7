//! Evaluation of class profiles: masking fidelity, cross-seed stability,
//! cross-architecture consensus, and transfer to a sparse linear probe.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{GraftError, Result};
use crate::nn::TrainedModel;
use crate::profiles::random_feature_set;
use crate::sparse::SparseRowMatrix;

/// Per-class and averaged masking fidelity of feature sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Test rows of a class are masked with that class's own feature set.
    pub masking_policy: String,
    pub k: usize,
    /// Unmasked accuracy over all test nodes.
    pub baseline_accuracy: f64,
    pub per_class: Vec<ClassFidelity>,
    /// Mean of defined per-class ratios.
    pub fid_minus: f64,
    /// Mean of per-class drops.
    pub fid_plus: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFidelity {
    pub class_id: usize,
    pub test_nodes: usize,
    pub unmasked_accuracy: f64,
    /// Accuracy when only the class's selected features survive.
    pub keep_only_accuracy: f64,
    /// Accuracy when the selected features are zeroed.
    pub drop_accuracy: f64,
    /// keep_only / unmasked; undefined when the unmasked accuracy is zero.
    pub fid_minus: Option<f64>,
    /// unmasked - drop; undefined without test nodes.
    pub fid_plus: Option<f64>,
}

/// Copies `features` with the rows in `rows` restricted to `keep` (when
/// `keep_mode`) or stripped of `keep` (otherwise). Other rows are untouched.
fn mask_rows(
    features: &SparseRowMatrix,
    rows: &[usize],
    set: &[usize],
    keep_mode: bool,
) -> SparseRowMatrix {
    let row_flag: Vec<bool> = {
        let mut f = vec![false; features.rows()];
        for &r in rows {
            f[r] = true;
        }
        f
    };
    let mut in_set = vec![false; features.cols()];
    for &c in set {
        in_set[c] = true;
    }
    let triplets: Vec<(usize, usize, f64)> = features
        .iter()
        .filter(|&(r, c, _)| {
            if !row_flag[r] {
                return true;
            }
            if keep_mode {
                in_set[c]
            } else {
                !in_set[c]
            }
        })
        .collect();
    SparseRowMatrix::from_triplets(features.rows(), features.cols(), triplets)
        .expect("masking preserves validity")
}

/// Fidelity of per-class feature sets against a trained model. For each
/// class, its test nodes are re-classified with features restricted to the
/// class's set (sufficiency) and with the set removed (necessity).
pub fn fidelity(
    model: &TrainedModel,
    dataset: &Dataset,
    feature_sets: &[Vec<usize>],
    k: usize,
) -> Result<FidelityReport> {
    if feature_sets.len() != dataset.class_count {
        return Err(GraftError::Shape(format!(
            "{} feature sets for {} classes",
            feature_sets.len(),
            dataset.class_count
        )));
    }
    let test_nodes = dataset.split_nodes(Split::Test);
    let baseline_accuracy = model.accuracy(&dataset.features, &dataset.labels, &test_nodes);

    let mut per_class = Vec::with_capacity(dataset.class_count);
    let mut minus_acc = Vec::new();
    let mut plus_acc = Vec::new();
    for class in 0..dataset.class_count {
        let rows = dataset.class_split_nodes(class, Split::Test);
        if rows.is_empty() {
            per_class.push(ClassFidelity {
                class_id: class,
                test_nodes: 0,
                unmasked_accuracy: 0.0,
                keep_only_accuracy: 0.0,
                drop_accuracy: 0.0,
                fid_minus: None,
                fid_plus: None,
            });
            continue;
        }
        let unmasked = model.accuracy(&dataset.features, &dataset.labels, &rows);
        let kept = mask_rows(&dataset.features, &rows, &feature_sets[class], true);
        let keep_only = model.accuracy(&kept, &dataset.labels, &rows);
        let dropped = mask_rows(&dataset.features, &rows, &feature_sets[class], false);
        let drop = model.accuracy(&dropped, &dataset.labels, &rows);

        let fid_minus = if unmasked > 0.0 {
            Some(keep_only / unmasked)
        } else {
            None
        };
        let fid_plus = Some(unmasked - drop);
        if let Some(m) = fid_minus {
            minus_acc.push(m);
        }
        plus_acc.push(unmasked - drop);
        per_class.push(ClassFidelity {
            class_id: class,
            test_nodes: rows.len(),
            unmasked_accuracy: unmasked,
            keep_only_accuracy: keep_only,
            drop_accuracy: drop,
            fid_minus,
            fid_plus,
        });
    }

    Ok(FidelityReport {
        masking_policy: "per-true-class".to_string(),
        k,
        baseline_accuracy,
        per_class,
        fid_minus: crate::util::mean(&minus_acc),
        fid_plus: crate::util::mean(&plus_acc),
    })
}

/// |a intersect b| / |a union b|; 1.0 when both sets are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Mean pairwise Jaccard per class.
    pub per_class: Vec<f64>,
    /// Mean over classes.
    pub mean: f64,
}

/// Cross-seed stability: mean pairwise Jaccard overlap of per-class top-K
/// sets across runs. `per_seed_sets[s][c]` is the top-K set of class c in
/// run s; at least two runs are required.
pub fn stability(per_seed_sets: &[Vec<Vec<usize>>], seeds: &[u64], k: usize) -> Result<StabilityReport> {
    if per_seed_sets.len() < 2 {
        return Err(GraftError::InvalidInput(
            "stability needs at least two runs".into(),
        ));
    }
    let class_count = per_seed_sets[0].len();
    if per_seed_sets.iter().any(|s| s.len() != class_count) {
        return Err(GraftError::Shape("runs disagree on class count".into()));
    }
    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let mut pair_scores = Vec::new();
        for i in 0..per_seed_sets.len() {
            for j in (i + 1)..per_seed_sets.len() {
                pair_scores.push(jaccard(&per_seed_sets[i][c], &per_seed_sets[j][c]));
            }
        }
        per_class.push(crate::util::mean(&pair_scores));
    }
    Ok(StabilityReport {
        k,
        seeds: seeds.to_vec(),
        mean: crate::util::mean(&per_class),
        per_class,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub k: usize,
    pub tau: usize,
    pub architectures: Vec<String>,
    /// Fraction of the per-class union shared by at least tau architectures.
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Cross-architecture consensus. `per_arch_sets[a][c]` is the top-K set of
/// class c under architecture a; a feature counts as consensual for a class
/// when at least `tau` architectures list it.
pub fn consensus(
    per_arch_sets: &[Vec<Vec<usize>>],
    architectures: &[String],
    tau: usize,
    k: usize,
) -> Result<ConsensusReport> {
    if tau == 0 {
        return Err(GraftError::InvalidInput("tau must be positive".into()));
    }
    if per_arch_sets.len() < tau {
        return Err(GraftError::InvalidInput(format!(
            "consensus at tau {tau} needs at least {tau} architectures, got {}",
            per_arch_sets.len()
        )));
    }
    let class_count = per_arch_sets[0].len();
    if per_arch_sets.iter().any(|s| s.len() != class_count) {
        return Err(GraftError::Shape(
            "architectures disagree on class count".into(),
        ));
    }
    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
        for arch_sets in per_arch_sets {
            for &f in &arch_sets[c] {
                *counts.entry(f).or_insert(0) += 1;
            }
        }
        let union = counts.len();
        let shared = counts.values().filter(|&&n| n >= tau).count();
        per_class.push(if union == 0 {
            1.0
        } else {
            shared as f64 / union as f64
        });
    }
    Ok(ConsensusReport {
        k,
        tau,
        architectures: architectures.to_vec(),
        mean: crate::util::mean(&per_class),
        per_class,
    })
}

/// Multinomial logistic probe over a feature subset.
#[derive(Debug, Clone)]
pub struct LogRegModel {
    pub selected: Vec<usize>,
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    /// Train-split mean and standard deviation of each selected column.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const LOGREG_L2: f64 = 1.0;
const LOGREG_MAX_ITERS: usize = 5000;
const LOGREG_TOL: f64 = 1e-5;

/// Trains a multinomial logistic regression on the train split over
/// `selected` feature columns. Columns are standardised with train-split
/// statistics; optimisation is full-batch gradient descent with a
/// backtracking line search from a zero initialisation, stopping when the
/// gradient max-norm falls below 1e-5 or after 5000 iterations. The L2
/// penalty (strength 1.0, scaled by train size) applies to weights only.
pub fn train_logreg(dataset: &Dataset, selected: &[usize]) -> Result<LogRegModel> {
    if selected.is_empty() {
        return Err(GraftError::InvalidInput(
            "logistic probe needs at least one feature".into(),
        ));
    }
    let x = dataset.features.select_columns(selected)?;
    let m = selected.len();
    let c = dataset.class_count;
    let train: Vec<usize> = dataset.split_nodes(Split::Train);
    let n = train.len() as f64;

    let mut mu = vec![0.0; m];
    let mut sigma = vec![0.0; m];
    for &v in &train {
        let (cols, vals) = x.row(v);
        for (&j, &val) in cols.iter().zip(vals) {
            mu[j] += val;
        }
    }
    for v in &mut mu {
        *v /= n;
    }
    for &v in &train {
        let row = x.row_dense(v);
        for j in 0..m {
            let dlt = row[j] - mu[j];
            sigma[j] += dlt * dlt;
        }
    }
    for s in &mut sigma {
        *s = (*s / n).sqrt();
        // Constant columns carry no signal; unit scale avoids division by 0.
        if *s == 0.0 {
            *s = 1.0;
        }
    }

    let mut w = Array2::<f64>::zeros((m, c));
    let mut b = Array2::<f64>::zeros((1, c));

    let loss_and_grad = |w: &Array2<f64>, b: &Array2<f64>| {
        let logits = logreg_logits(&x, w, b, &mu, &sigma, &train);
        let mut loss = 0.0;
        let mut g = Array2::<f64>::zeros((train.len(), c));
        for (t, &v) in train.iter().enumerate() {
            let row = logits.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
            let y = dataset.labels[v];
            loss -= row[y] - max - z.ln();
            for j in 0..c {
                g[(t, j)] = ((row[j] - max).exp() / z) / n;
            }
            g[(t, y)] -= 1.0 / n;
        }
        loss /= n;
        loss += LOGREG_L2 / (2.0 * n) * w.iter().map(|v| v * v).sum::<f64>();

        // grad_W[i] = sum_t std_x[t, i] * g[t] + (l2/n) w[i], via the
        // implicit standardisation x_std = (x - mu) / sigma.
        let mut grad_w = Array2::<f64>::zeros((m, c));
        let mut col_sum = vec![0.0; c];
        for (t, &v) in train.iter().enumerate() {
            let (cols, vals) = x.row(v);
            for (&i, &val) in cols.iter().zip(vals) {
                for j in 0..c {
                    grad_w[(i, j)] += val / sigma[i] * g[(t, j)];
                }
            }
            for j in 0..c {
                col_sum[j] += g[(t, j)];
            }
        }
        for i in 0..m {
            let shift = mu[i] / sigma[i];
            for j in 0..c {
                grad_w[(i, j)] -= shift * col_sum[j];
                grad_w[(i, j)] += LOGREG_L2 / n * w[(i, j)];
            }
        }
        let grad_b = Array2::from_shape_vec((1, c), col_sum).expect("bias gradient shape");
        (loss, grad_w, grad_b)
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut step: f64 = 1.0;
    for it in 0..LOGREG_MAX_ITERS {
        iterations = it + 1;
        let (loss, gw, gb) = loss_and_grad(&w, &b);
        let gmax = gw
            .iter()
            .chain(gb.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        if gmax < LOGREG_TOL {
            converged = true;
            iterations = it;
            break;
        }
        let gnorm2: f64 = gw.iter().map(|v| v * v).sum::<f64>()
            + gb.iter().map(|v| v * v).sum::<f64>();
        // Backtracking line search with a gently growing initial step.
        step = (step * 2.0).min(1e6);
        loop {
            let wt = &w - &(step * &gw);
            let bt = &b - &(step * &gb);
            let (lt, _, _) = loss_and_grad(&wt, &bt);
            if lt <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                w = wt;
                b = bt;
                break;
            }
            step *= 0.5;
        }
    }

    Ok(LogRegModel {
        selected: selected.to_vec(),
        w,
        b,
        mu,
        sigma,
        iterations,
        converged,
    })
}

fn logreg_logits(
    x: &SparseRowMatrix,
    w: &Array2<f64>,
    b: &Array2<f64>,
    mu: &[f64],
    sigma: &[f64],
    nodes: &[usize],
) -> Array2<f64> {
    let c = w.ncols();
    // offset = b - sum_i (mu_i / sigma_i) w[i]; then only stored entries of
    // each row contribute x/sigma * w.
    let mut offset = b.clone();
    for i in 0..w.nrows() {
        let shift = mu[i] / sigma[i];
        for j in 0..c {
            offset[(0, j)] -= shift * w[(i, j)];
        }
    }
    let mut out = Array2::<f64>::zeros((nodes.len(), c));
    for (t, &v) in nodes.iter().enumerate() {
        let (cols, vals) = x.row(v);
        let mut row = out.row_mut(t);
        for j in 0..c {
            row[j] = offset[(0, j)];
        }
        for (&i, &val) in cols.iter().zip(vals) {
            for j in 0..c {
                row[j] += val / sigma[i] * w[(i, j)];
            }
        }
    }
    out
}

/// Accuracy of a trained probe over one split of the dataset it indexes.
pub fn logreg_accuracy(model: &LogRegModel, dataset: &Dataset, split: Split) -> Result<f64> {
    let x = dataset.features.select_columns(&model.selected)?;
    let nodes = dataset.split_nodes(split);
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let logits = logreg_logits(&x, &model.w, &model.b, &model.mu, &model.sigma, &nodes);
    let correct = nodes
        .iter()
        .enumerate()
        .filter(|&(t, &v)| crate::nn::argmax_row(&logits, t) == dataset.labels[v])
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub k: usize,
    /// Union of the per-class profile sets, ascending.
    pub graft_union: Vec<usize>,
    pub freq_union: Vec<usize>,
    pub random_set: Vec<usize>,
    pub graft_lr_accuracy: f64,
    pub freq_lr_accuracy: f64,
    pub full_lr_accuracy: f64,
    pub random_lr_accuracy: f64,
    pub gnn_test_accuracy: f64,
    /// |graft union| / feature_dim.
    pub compression: f64,
}

fn union_of(sets: &[Vec<usize>]) -> Vec<usize> {
    let mut u: Vec<usize> = sets.iter().flatten().copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Transfer evaluation: trains logistic probes on the profile union, a
/// frequency-baseline union, all features, and a size-matched random
/// feature set, reporting test accuracies.
pub fn transfer(
    dataset: &Dataset,
    graft_sets: &[Vec<usize>],
    freq_sets: &[Vec<usize>],
    k: usize,
    random_seed: u64,
    gnn_test_accuracy: f64,
) -> Result<TransferReport> {
    let graft_union = union_of(graft_sets);
    let freq_union = union_of(freq_sets);
    let random_set = random_feature_set(dataset.feature_dim, graft_union.len(), random_seed);
    let all: Vec<usize> = (0..dataset.feature_dim).collect();

    let graft_lr = train_logreg(dataset, &graft_union)?;
    let freq_lr = train_logreg(dataset, &freq_union)?;
    let full_lr = train_logreg(dataset, &all)?;
    let random_lr = train_logreg(dataset, &random_set)?;

    Ok(TransferReport {
        k,
        compression: graft_union.len() as f64 / dataset.feature_dim as f64,
        graft_lr_accuracy: logreg_accuracy(&graft_lr, dataset, Split::Test)?,
        freq_lr_accuracy: logreg_accuracy(&freq_lr, dataset, Split::Test)?,
        full_lr_accuracy: logreg_accuracy(&full_lr, dataset, Split::Test)?,
        random_lr_accuracy: logreg_accuracy(&random_lr, dataset, Split::Test)?,
        gnn_test_accuracy,
        graft_union,
        freq_union,
        random_set,
    })
}

/// One line of the run summary table; None renders as NA.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub fid_minus: Option<f64>,
    pub fid_plus: Option<f64>,
    pub jaccard: Option<f64>,
    pub consensus: Option<f64>,
    pub transfer_graft: Option<f64>,
    pub transfer_freq: Option<f64>,
    pub transfer_full: Option<f64>,
    pub compression: Option<f64>,
}

/// Renders summary rows as a TSV document with a config-hash comment and a
/// header line; rows are sorted by (dataset, arch, seed).
pub fn render_summary(rows: &[SummaryRow], config_hash: &str) -> String {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.dataset, &a.arch, a.seed).cmp(&(&b.dataset, &b.arch, b.seed))
    });
    let mut out = format!("# config: {config_hash}\n");
    out.push_str(
        "dataset\tarch\tseed\tfid_minus\tfid_plus\tjaccard\tconsensus\ttransfer_graft\ttransfer_freq\ttransfer_full\tcompression\n",
    );
    let fmt = |v: &Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".to_string(),
    };
    for r in sorted {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.dataset,
            r.arch,
            r.seed,
            fmt(&r.fid_minus),
            fmt(&r.fid_plus),
            fmt(&r.jaccard),
            fmt(&r.consensus),
            fmt(&r.transfer_graft),
            fmt(&r.transfer_freq),
            fmt(&r.transfer_full),
            fmt(&r.compression),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_basics() {
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[], &[]), 1.0);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
        assert_eq!(jaccard(&[5, 6], &[5, 6]), 1.0);
        // Duplicates are set-collapsed.
        assert_eq!(jaccard(&[1, 1, 2], &[1, 2, 2]), 1.0);
    }

    #[test]
    fn stability_averages_pairs() {
        // Two runs, one class: single pair.
        let runs = vec![vec![vec![1, 2, 3, 4]], vec![vec![3, 4, 5, 6]]];
        let rep = stability(&runs, &[0, 1], 4).unwrap();
        assert!((rep.per_class[0] - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(rep.mean, rep.per_class[0]);
        assert!(stability(&runs[..1], &[0], 4).is_err());
    }

    #[test]
    fn consensus_counts_shared_features() {
        // Three architectures, one class. Union {1,2,3,4,5}; features with
        // >= 2 votes: {2 (3 votes), 3 (2 votes)} -> 2/5.
        let archs = vec![
            vec![vec![1, 2, 3]],
            vec![vec![2, 3, 4]],
            vec![vec![2, 5]],
        ];
        let names = vec!["gcn".to_string(), "sage".to_string(), "gin".to_string()];
        let rep = consensus(&archs, &names, 2, 3).unwrap();
        assert!((rep.per_class[0] - 2.0 / 5.0).abs() < 1e-15);
        assert!(consensus(&archs[..1], &names[..1], 2, 3).is_err());
        assert!(consensus(&archs, &names, 0, 3).is_err());
    }

    #[test]
    fn summary_rows_render_sorted_with_na() {
        let rows = vec![
            SummaryRow {
                dataset: "b".into(),
                arch: "gcn".into(),
                seed: 1,
                fid_minus: Some(0.5),
                fid_plus: None,
                jaccard: None,
                consensus: None,
                transfer_graft: None,
                transfer_freq: None,
                transfer_full: None,
                compression: None,
            },
            SummaryRow {
                dataset: "a".into(),
                arch: "gcn".into(),
                seed: 2,
                fid_minus: None,
                fid_plus: Some(0.25),
                jaccard: None,
                consensus: None,
                transfer_graft: None,
                transfer_freq: None,
                transfer_full: None,
                compression: None,
            },
        ];
        let text = render_summary(&rows, "deadbeef");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config: deadbeef");
        assert!(lines[1].starts_with("dataset\tarch\tseed"));
        assert!(lines[2].starts_with("a\tgcn\t2\tNA\t0.250000"));
        assert!(lines[3].starts_with("b\tgcn\t1\t0.500000\tNA"));
    }
}
