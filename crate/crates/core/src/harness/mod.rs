//! Experiment orchestration: LIME against integrated gradients, the
//! concentration experiment, self-tests and report output.

pub mod experiment;
pub mod jaccard;
pub mod report;
pub mod selftest;
pub mod synthetic;

pub use experiment::{
    run_comparison, run_concentration, ComparisonReport, ConcentrationReport, ExperimentConfig, ImageSource,
    ModelSource, SegmenterConfig,
};
pub use jaccard::{expected_random_jaccard, jaccard, random_baseline};
pub use report::{to_json_string, write_json};
pub use selftest::{run_selftest, SelftestOptions, SelftestReport};
pub use synthetic::{synthetic_digit, synthetic_texture, SyntheticImages, SyntheticKind};
