use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{build_adjacency, Dataset, Split};
use crate::error::{GraftError, Result};
use crate::sparse::SparseRowMatrix;

/// Loads a dataset bundle directory.
///
/// Expected files: `graph.edges` (src<TAB>dst), `features.tsv`
/// (node<TAB>feature<TAB>value), `labels.tsv` (node<TAB>label), `splits.tsv`
/// (node<TAB>train|val|test), and optionally `feature_names.tsv`
/// (feature<TAB>name). All files are UTF-8, LF-terminated, without headers.
/// The dataset name is the directory stem.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    let labels_path = dir.join("labels.tsv");
    let labels = read_labels(&labels_path)?;
    let node_count = labels.len();
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);

    let splits = read_splits(&dir.join("splits.tsv"), node_count)?;
    let edges = read_edges(&dir.join("graph.edges"))?;
    let (feature_triplets, max_feature) = read_features(&dir.join("features.tsv"), node_count)?;

    let names_path = dir.join("feature_names.tsv");
    let feature_names = if names_path.exists() {
        Some(read_feature_names(&names_path)?)
    } else {
        None
    };

    let from_entries = max_feature.map_or(0, |m| m + 1);
    let feature_dim = match &feature_names {
        Some(names) => {
            if names.len() < from_entries {
                return Err(GraftError::InvalidInput(format!(
                    "feature_names.tsv lists {} names but features.tsv uses index {}",
                    names.len(),
                    from_entries - 1
                )));
            }
            names.len()
        }
        None => from_entries,
    };
    if feature_dim == 0 {
        return Err(GraftError::InvalidInput(
            "dataset has no feature columns".into(),
        ));
    }

    let features = SparseRowMatrix::from_triplets(node_count, feature_dim, feature_triplets)?;
    let adjacency = build_adjacency(node_count, &edges)?;
    let ds = Dataset {
        name,
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

/// Writes a dataset bundle; the inverse of [`load_dataset`]. Feature values
/// round-trip bit-exactly through the shortest decimal representation.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GraftError::io(dir.display().to_string(), e))?;

    let mut edges = String::new();
    for (u, v) in ds.canonical_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_file(&dir.join("graph.edges"), &edges)?;

    let mut feats = String::new();
    for (node, feature, value) in ds.features.iter() {
        feats.push_str(&format!("{node}\t{feature}\t{value}\n"));
    }
    write_file(&dir.join("features.tsv"), &feats)?;

    let mut labels = String::new();
    for (node, y) in ds.labels.iter().enumerate() {
        labels.push_str(&format!("{node}\t{y}\n"));
    }
    write_file(&dir.join("labels.tsv"), &labels)?;

    let mut splits = String::new();
    for (node, s) in ds.splits.iter().enumerate() {
        splits.push_str(&format!("{node}\t{}\n", s.as_str()));
    }
    write_file(&dir.join("splits.tsv"), &splits)?;

    if let Some(names) = &ds.feature_names {
        let mut out = String::new();
        for (i, n) in names.iter().enumerate() {
            out.push_str(&format!("{i}\t{n}\n"));
        }
        write_file(&dir.join("feature_names.tsv"), &out)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f =
        fs::File::create(path).map_err(|e| GraftError::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| GraftError::io(path.display().to_string(), e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).map_err(|e| GraftError::io(path.display().to_string(), e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn fields<'a>(path: &Path, lineno: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != n {
        return Err(GraftError::parse(
            path.display().to_string(),
            lineno,
            format!("expected {n} tab-separated fields, found {}", parts.len()),
        ));
    }
    Ok(parts)
}

fn parse_usize(path: &Path, lineno: usize, s: &str, what: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| {
        GraftError::parse(
            path.display().to_string(),
            lineno,
            format!("invalid {what} '{s}'"),
        )
    })
}

/// labels.tsv must enumerate every node id exactly once; node count is the
/// number of lines.
fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let lines = read_lines(path)?;
    let n = lines.len();
    let mut labels = vec![usize::MAX; n];
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        let parts = fields(path, lineno, line, 2)?;
        let node = parse_usize(path, lineno, parts[0], "node id")?;
        let label = parse_usize(path, lineno, parts[1], "label")?;
        if node >= n {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("node id {node} out of range; labels.tsv has {n} lines"),
            ));
        }
        if labels[node] != usize::MAX {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("duplicate label for node {node}"),
            ));
        }
        labels[node] = label;
    }
    Ok(labels)
}

fn read_splits(path: &Path, node_count: usize) -> Result<Vec<Split>> {
    let lines = read_lines(path)?;
    let mut splits = vec![None; node_count];
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        let parts = fields(path, lineno, line, 2)?;
        let node = parse_usize(path, lineno, parts[0], "node id")?;
        if node >= node_count {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("node id {node} out of range for {node_count} nodes"),
            ));
        }
        let split = Split::parse(parts[1]).ok_or_else(|| {
            GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("invalid split '{}'; expected train, val or test", parts[1]),
            )
        })?;
        if splits[node].is_some() {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("duplicate split for node {node}"),
            ));
        }
        splits[node] = Some(split);
    }
    splits
        .into_iter()
        .enumerate()
        .map(|(v, s)| {
            s.ok_or_else(|| {
                GraftError::InvalidInput(format!("splits.tsv does not cover node {v}"))
            })
        })
        .collect()
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let lines = read_lines(path)?;
    let mut edges = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let parts = fields(path, lineno, line, 2)?;
        let a = parse_usize(path, lineno, parts[0], "source node")?;
        let b = parse_usize(path, lineno, parts[1], "target node")?;
        edges.push((a, b));
    }
    Ok(edges)
}

fn read_features(
    path: &Path,
    node_count: usize,
) -> Result<(Vec<(usize, usize, f64)>, Option<usize>)> {
    let lines = read_lines(path)?;
    let mut triplets = Vec::with_capacity(lines.len());
    let mut max_feature: Option<usize> = None;
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let parts = fields(path, lineno, line, 3)?;
        let node = parse_usize(path, lineno, parts[0], "node id")?;
        let feature = parse_usize(path, lineno, parts[1], "feature index")?;
        let value: f64 = parts[2].parse().map_err(|_| {
            GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("invalid feature value '{}'", parts[2]),
            )
        })?;
        if node >= node_count {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("node id {node} out of range for {node_count} nodes"),
            ));
        }
        if !value.is_finite() {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("non-finite feature value '{}'", parts[2]),
            ));
        }
        max_feature = Some(max_feature.map_or(feature, |m| m.max(feature)));
        triplets.push((node, feature, value));
    }
    Ok((triplets, max_feature))
}

fn read_feature_names(path: &Path) -> Result<Vec<String>> {
    let lines = read_lines(path)?;
    let n = lines.len();
    let mut names = vec![None; n];
    for (i, line) in lines.iter().enumerate() {
        let lineno = i + 1;
        let parts = fields(path, lineno, line, 2)?;
        let idx = parse_usize(path, lineno, parts[0], "feature index")?;
        if idx >= n {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("feature index {idx} out of range; file has {n} lines"),
            ));
        }
        if names[idx].is_some() {
            return Err(GraftError::parse(
                path.display().to_string(),
                lineno,
                format!("duplicate name for feature {idx}"),
            ));
        }
        names[idx] = Some(parts[1].to_string());
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            n.ok_or_else(|| {
                GraftError::InvalidInput(format!("feature_names.tsv does not cover index {i}"))
            })
        })
        .collect()
}
