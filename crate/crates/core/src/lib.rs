//! Explanation invariance and equivariance for symmetry-invariant models.

pub mod attribution;
pub mod concept_probes;
pub mod container;
pub mod data_synth;
pub mod error;
pub mod example_importance;
pub mod explainer;
pub mod explanation;
pub mod harness;
pub mod invariance_enforcer;
pub mod model_zoo;
pub mod robustness_metrics;
pub mod symmetry;
pub mod tensor_engine;

pub use error::{Error, Result};
pub use explainer::Explainer;
pub use explanation::Explanation;
