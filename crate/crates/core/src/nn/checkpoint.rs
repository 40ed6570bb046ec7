//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//! magic "GRFTCKPT", format version u32, config hash (u32 length + UTF-8),
//! architecture tag (u32 length + UTF-8), hidden_dim u64, epochs u64,
//! seed u64, learning_rate f64, weight_decay f64, feature_dim u64,
//! class_count u64, four accuracies f64 (initial train, train, val, test),
//! tensor count u32, then per tensor: name (u32 length + UTF-8), rows u64,
//! cols u64, rows*cols f64 values row-major. Floats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{GraftError, Result};
use crate::nn::graph::ArchOps;
use crate::nn::params::{Arch, ArchParams};
use crate::nn::{Hyperparams, TrainedModel};

const MAGIC: &[u8; 8] = b"GRFTCKPT";
const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &TrainedModel, config_hash: &str, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_str(&mut buf, config_hash);
    put_str(&mut buf, model.arch.tag());
    put_u64(&mut buf, model.hyperparams.hidden_dim as u64);
    put_u64(&mut buf, model.hyperparams.epochs as u64);
    put_u64(&mut buf, model.hyperparams.seed);
    put_f64(&mut buf, model.hyperparams.learning_rate);
    put_f64(&mut buf, model.hyperparams.weight_decay);
    put_u64(&mut buf, model.feature_dim as u64);
    put_u64(&mut buf, model.class_count as u64);
    put_f64(&mut buf, model.initial_train_accuracy);
    put_f64(&mut buf, model.train_accuracy);
    put_f64(&mut buf, model.val_accuracy);
    put_f64(&mut buf, model.test_accuracy);

    let tensors = model.params.tensors();
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in tensors {
        put_str(&mut buf, name);
        put_u64(&mut buf, t.nrows() as u64);
        put_u64(&mut buf, t.ncols() as u64);
        for v in t.iter() {
            put_f64(&mut buf, *v);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| GraftError::io(parent.display().to_string(), e))?;
    }
    fs::write(path, buf).map_err(|e| GraftError::io(path.display().to_string(), e))
}

/// Loads a checkpoint and rebinds it to `dataset`, whose adjacency rebuilds
/// the aggregation operators. Returns the model and the stored config hash.
pub fn load_checkpoint(path: &Path, dataset: &Dataset) -> Result<(TrainedModel, String)> {
    let buf = fs::read(path).map_err(|e| GraftError::io(path.display().to_string(), e))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(GraftError::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(GraftError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let config_hash = cur.string()?;
    let tag = cur.string()?;
    let arch = Arch::parse(&tag)
        .ok_or_else(|| GraftError::Checkpoint(format!("unknown architecture tag '{tag}'")))?;
    let hyperparams = Hyperparams {
        hidden_dim: cur.u64()? as usize,
        epochs: cur.u64()? as usize,
        seed: cur.u64()?,
        learning_rate: cur.f64()?,
        weight_decay: cur.f64()?,
    };
    let feature_dim = cur.u64()? as usize;
    let class_count = cur.u64()? as usize;
    let initial_train_accuracy = cur.f64()?;
    let train_accuracy = cur.f64()?;
    let val_accuracy = cur.f64()?;
    let test_accuracy = cur.f64()?;

    let tensor_count = cur.u32()? as usize;
    let mut named = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name = cur.string()?;
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(cur.f64()?);
        }
        let t = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| GraftError::Checkpoint(format!("tensor '{name}': {e}")))?;
        named.push((name, t));
    }
    if cur.pos != buf.len() {
        return Err(GraftError::Checkpoint(format!(
            "{} trailing bytes after tensors",
            buf.len() - cur.pos
        )));
    }
    let params = ArchParams::from_named(arch, named)?;

    if feature_dim != dataset.feature_dim || class_count != dataset.class_count {
        return Err(GraftError::Checkpoint(format!(
            "checkpoint was trained on {feature_dim} features / {class_count} classes, \
             dataset has {} / {}",
            dataset.feature_dim, dataset.class_count
        )));
    }
    let ops = ArchOps::build(arch, &dataset.adjacency);
    Ok((
        TrainedModel {
            arch,
            hyperparams,
            feature_dim,
            class_count,
            params,
            ops,
            initial_train_accuracy,
            train_accuracy,
            val_accuracy,
            test_accuracy,
        },
        config_hash,
    ))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(GraftError::Checkpoint(
                "unexpected end of checkpoint".into(),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| GraftError::Checkpoint("invalid UTF-8 in checkpoint string".into()))
    }
}
