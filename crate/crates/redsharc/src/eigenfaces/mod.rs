//! Bundled face-recognition demo: an eigenfaces pipeline running on the
//! runtime, a synthetic dataset generator, and a sequential oracle that
//! implements the same math directly for verification.

pub mod dataset;
pub mod math;
pub mod oracle;
pub mod pipeline;

pub use dataset::{generate_synthetic_dataset, Dataset};
pub use oracle::{sequential_oracle, MatchResult};
pub use pipeline::{build_dfg, build_registry, demo_config, run_pipeline};
