//! Core library for training small graph neural networks on node
//! classification tasks and explaining them with class-level feature
//! importance profiles.
//!
//! The pipeline has four stages: exemplar selection in embedding space,
//! integrated-gradients attribution of each exemplar, aggregation into a
//! per-class profile, and optional verbalisation of profiles through a
//! language-model endpoint. Evaluation utilities cover fidelity, stability,
//! cross-architecture consensus, transfer to a sparse linear probe, and
//! planted-bias audits.

pub mod attribution;
pub mod audit;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exemplars;
pub mod nn;
pub mod pipeline;
pub mod profiles;
pub mod rules;
pub mod sparse;
pub mod tape;
pub mod util;

pub use error::{GraftError, Result};
