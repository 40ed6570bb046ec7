use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};

/// Supported message-passing architectures. All are two layers deep with a
/// ReLU between the layers; logits are emitted raw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Sage,
    Gin,
    Gat,
}

pub const ALL_ARCHS: [Arch; 4] = [Arch::Gcn, Arch::Sage, Arch::Gin, Arch::Gat];

impl Arch {
    pub fn tag(&self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Sage => "sage",
            Arch::Gin => "gin",
            Arch::Gat => "gat",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        match s {
            "gcn" => Some(Arch::Gcn),
            "sage" => Some(Arch::Sage),
            "gin" => Some(Arch::Gin),
            "gat" => Some(Arch::Gat),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Two-layer perceptron block used inside each GIN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w_in: Array2<f64>,
    pub b_in: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

/// Learnable tensors of one model. Tensor names are stable identifiers used
/// by the checkpoint format; [`ArchParams::tensors`] fixes both the naming
/// and the initialisation draw order.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchParams {
    Gcn {
        w1: Array2<f64>,
        b1: Array2<f64>,
        w2: Array2<f64>,
        b2: Array2<f64>,
    },
    Sage {
        w_self1: Array2<f64>,
        w_neigh1: Array2<f64>,
        b1: Array2<f64>,
        w_self2: Array2<f64>,
        w_neigh2: Array2<f64>,
        b2: Array2<f64>,
    },
    Gin {
        mlp1: MlpParams,
        mlp2: MlpParams,
    },
    Gat {
        w1: Array2<f64>,
        a_src1: Array2<f64>,
        a_dst1: Array2<f64>,
        b1: Array2<f64>,
        w2: Array2<f64>,
        a_src2: Array2<f64>,
        a_dst2: Array2<f64>,
        b2: Array2<f64>,
    },
}

/// Glorot-uniform sample with the limit sqrt(6 / (fan_in + fan_out)).
fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

fn zeros(cols: usize) -> Array2<f64> {
    Array2::zeros((1, cols))
}

impl ArchParams {
    /// Fresh parameters. Weight matrices are Glorot-uniform, biases zero;
    /// draws happen in [`ArchParams::tensors`] order.
    pub fn init(
        arch: Arch,
        feature_dim: usize,
        hidden_dim: usize,
        class_count: usize,
        rng: &mut ChaCha8Rng,
    ) -> ArchParams {
        let (d, h, c) = (feature_dim, hidden_dim, class_count);
        match arch {
            Arch::Gcn => ArchParams::Gcn {
                w1: glorot(rng, d, h),
                b1: zeros(h),
                w2: glorot(rng, h, c),
                b2: zeros(c),
            },
            Arch::Sage => ArchParams::Sage {
                w_self1: glorot(rng, d, h),
                w_neigh1: glorot(rng, d, h),
                b1: zeros(h),
                w_self2: glorot(rng, h, c),
                w_neigh2: glorot(rng, h, c),
                b2: zeros(c),
            },
            Arch::Gin => ArchParams::Gin {
                mlp1: MlpParams {
                    w_in: glorot(rng, d, h),
                    b_in: zeros(h),
                    w_out: glorot(rng, h, h),
                    b_out: zeros(h),
                },
                mlp2: MlpParams {
                    w_in: glorot(rng, h, h),
                    b_in: zeros(h),
                    w_out: glorot(rng, h, c),
                    b_out: zeros(c),
                },
            },
            Arch::Gat => ArchParams::Gat {
                w1: glorot(rng, d, h),
                a_src1: glorot(rng, h, 1),
                a_dst1: glorot(rng, h, 1),
                b1: zeros(h),
                w2: glorot(rng, h, c),
                a_src2: glorot(rng, c, 1),
                a_dst2: glorot(rng, c, 1),
                b2: zeros(c),
            },
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            ArchParams::Gcn { .. } => Arch::Gcn,
            ArchParams::Sage { .. } => Arch::Sage,
            ArchParams::Gin { .. } => Arch::Gin,
            ArchParams::Gat { .. } => Arch::Gat,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        match self {
            ArchParams::Gcn { w1, b1, w2, b2 } => {
                vec![("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
            }
            ArchParams::Sage {
                w_self1,
                w_neigh1,
                b1,
                w_self2,
                w_neigh2,
                b2,
            } => vec![
                ("w_self1", w_self1),
                ("w_neigh1", w_neigh1),
                ("b1", b1),
                ("w_self2", w_self2),
                ("w_neigh2", w_neigh2),
                ("b2", b2),
            ],
            ArchParams::Gin { mlp1, mlp2 } => vec![
                ("mlp1.w_in", &mlp1.w_in),
                ("mlp1.b_in", &mlp1.b_in),
                ("mlp1.w_out", &mlp1.w_out),
                ("mlp1.b_out", &mlp1.b_out),
                ("mlp2.w_in", &mlp2.w_in),
                ("mlp2.b_in", &mlp2.b_in),
                ("mlp2.w_out", &mlp2.w_out),
                ("mlp2.b_out", &mlp2.b_out),
            ],
            ArchParams::Gat {
                w1,
                a_src1,
                a_dst1,
                b1,
                w2,
                a_src2,
                a_dst2,
                b2,
            } => vec![
                ("w1", w1),
                ("a_src1", a_src1),
                ("a_dst1", a_dst1),
                ("b1", b1),
                ("w2", w2),
                ("a_src2", a_src2),
                ("a_dst2", a_dst2),
                ("b2", b2),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        match self {
            ArchParams::Gcn { w1, b1, w2, b2 } => {
                vec![("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
            }
            ArchParams::Sage {
                w_self1,
                w_neigh1,
                b1,
                w_self2,
                w_neigh2,
                b2,
            } => vec![
                ("w_self1", w_self1),
                ("w_neigh1", w_neigh1),
                ("b1", b1),
                ("w_self2", w_self2),
                ("w_neigh2", w_neigh2),
                ("b2", b2),
            ],
            ArchParams::Gin { mlp1, mlp2 } => vec![
                ("mlp1.w_in", &mut mlp1.w_in),
                ("mlp1.b_in", &mut mlp1.b_in),
                ("mlp1.w_out", &mut mlp1.w_out),
                ("mlp1.b_out", &mut mlp1.b_out),
                ("mlp2.w_in", &mut mlp2.w_in),
                ("mlp2.b_in", &mut mlp2.b_in),
                ("mlp2.w_out", &mut mlp2.w_out),
                ("mlp2.b_out", &mut mlp2.b_out),
            ],
            ArchParams::Gat {
                w1,
                a_src1,
                a_dst1,
                b1,
                w2,
                a_src2,
                a_dst2,
                b2,
            } => vec![
                ("w1", w1),
                ("a_src1", a_src1),
                ("a_dst1", a_dst1),
                ("b1", b1),
                ("w2", w2),
                ("a_src2", a_src2),
                ("a_dst2", a_dst2),
                ("b2", b2),
            ],
        }
    }

    /// Rebuilds parameters from named tensors, e.g. from a checkpoint.
    /// Names and count must match the architecture exactly.
    pub fn from_named(arch: Arch, named: Vec<(String, Array2<f64>)>) -> Result<ArchParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let template = ArchParams::init(arch, 1, 1, 1, &mut rng);
        let expected: Vec<&'static str> = template.tensors().iter().map(|(n, _)| *n).collect();
        if named.len() != expected.len() {
            return Err(GraftError::Checkpoint(format!(
                "{} tensors for {arch}, expected {}",
                named.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(named.len());
        for ((name, value), want) in named.into_iter().zip(&expected) {
            if name != *want {
                return Err(GraftError::Checkpoint(format!(
                    "unexpected tensor '{name}', expected '{want}'"
                )));
            }
            values.push(value);
        }
        let mut it = values.into_iter();
        let mut next = || it.next().expect("length checked above");
        Ok(match arch {
            Arch::Gcn => ArchParams::Gcn {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            },
            Arch::Sage => ArchParams::Sage {
                w_self1: next(),
                w_neigh1: next(),
                b1: next(),
                w_self2: next(),
                w_neigh2: next(),
                b2: next(),
            },
            Arch::Gin => ArchParams::Gin {
                mlp1: MlpParams {
                    w_in: next(),
                    b_in: next(),
                    w_out: next(),
                    b_out: next(),
                },
                mlp2: MlpParams {
                    w_in: next(),
                    b_in: next(),
                    w_out: next(),
                    b_out: next(),
                },
            },
            Arch::Gat => ArchParams::Gat {
                w1: next(),
                a_src1: next(),
                a_dst1: next(),
                b1: next(),
                w2: next(),
                a_src2: next(),
                a_dst2: next(),
                b2: next(),
            },
        })
    }
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        for arch in ALL_ARCHS {
            let mut r1 = ChaCha8Rng::seed_from_u64(5);
            let mut r2 = ChaCha8Rng::seed_from_u64(5);
            let a = ArchParams::init(arch, 10, 8, 3, &mut r1);
            let b = ArchParams::init(arch, 10, 8, 3, &mut r2);
            assert_eq!(a, b);
            for (name, t) in a.tensors() {
                assert!(t.iter().all(|v| v.is_finite()), "{arch}/{name}");
                if name.starts_with('b') || name.contains(".b") {
                    assert!(t.iter().all(|&v| v == 0.0), "{arch}/{name} bias must be zero");
                }
            }
        }
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = glorot(&mut rng, 30, 50);
        let limit = (6.0 / 80.0f64).sqrt();
        assert!(m.iter().all(|&v| v.abs() < limit));
        assert!(m.iter().any(|&v| v.abs() > 0.5 * limit));
    }

    #[test]
    fn named_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for arch in ALL_ARCHS {
            let p = ArchParams::init(arch, 6, 4, 2, &mut rng);
            let named: Vec<(String, Array2<f64>)> = p
                .tensors()
                .iter()
                .map(|(n, t)| (n.to_string(), (*t).clone()))
                .collect();
            let q = ArchParams::from_named(arch, named).unwrap();
            assert_eq!(p, q);
        }
    }
}
