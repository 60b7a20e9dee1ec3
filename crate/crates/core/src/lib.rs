//! Exemplar-free class-incremental learning on frozen features with
//! Gaussian class statistics.
//!
//! The crate keeps a single linear classifier over every class seen so far.
//! Old classes are represented only by a mean and covariance. A learnable
//! affine feature adapter tracks drift of the feature extractor across
//! tasks. Old-class statistics are either frozen in output space or pushed
//! through the current adapter.
//!
//! Modules:
//!
//! - [`stats`]: streaming per-class statistics, shrinkage, affine
//!   pushforward, variance enlarging and Gaussian sampling.
//! - [`loss`]: sample-based and distribution-based cross-entropy, the
//!   adaptive-margin loss, a soft-margin baseline, and the seven ablation
//!   variants with analytic gradients.
//! - [`optim`]: momentum SGD over classifier and adapter.
//! - [`trainer`]: the task-by-task protocol, evaluation, LA/AIA metrics.
//! - [`dataio`]: the EFCF feature format, the synthetic drift benchmark,
//!   and JSON/CSV reports.
//! - [`verify`]: randomized certification suites for the numerical core.
//!
//! Runnable examples live in `crates/core/examples/`:
//! `stats_pipeline`, `losses`, `margin_identity`, `incremental_scenario`,
//! `ablation`, `feature_files` and `verify_suites`.

pub mod dataio;
pub mod error;
pub mod loss;
pub mod optim;
pub mod stats;
pub mod trainer;
pub mod verify;

pub use dataio::{
    gen_synthetic, read_feature_file, write_feature_file, FeatureDataset, SynthConfig,
};
pub use error::{Error, ErrorClass, Result};
pub use loss::{ClassBank, ClassifierParams, LossResult, Variant, VariantSpec};
pub use stats::{ClassStats, FeatureAdapter, Shrinkage, StatsAccumulator};
pub use trainer::{
    compute_metrics, run_scenario, run_scenario_averaged, OptimizerConfig, ResultReport,
    ScenarioConfig, StatsMode,
};
