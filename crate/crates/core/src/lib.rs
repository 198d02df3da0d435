//! Positive-unlabeled heterogeneous domain adaptation on linear models.
//!
//! A positive-only source domain and an unlabeled target domain share a block
//! of common features; each also has its own domain-specific block. The
//! trainers here learn a target classifier, a discriminator, and a linear
//! transformer from target features into the source-specific space by
//! alternating gradient steps on KL-based adversarial objectives.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod trainers;

pub use error::{Error, Result};
pub use models::{LinearSoftmaxModel, LinearTransform};
pub use numerics::{kl2, softmax2, swap, Class, DenseMatrix, ProbPair, RngSeed, SeededRng};

/// Version string stamped on checkpoints and reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
