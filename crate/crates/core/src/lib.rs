//! Outlier-resilient QoS prediction.
//!
//! Cauchy-loss matrix factorization for static user × service data,
//! Cauchy-weighted nonnegative CP factorization for user × service × time
//! data, L2/L1 baselines, isolation-forest outlier exclusion for evaluation,
//! dataset I/O and an experiment harness.

pub mod data;
pub mod error;
pub mod experiment;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod mf;
pub mod outlier;
pub mod synth;
pub mod tf;

pub use error::{Error, Result};
pub use loss::LossKind;
