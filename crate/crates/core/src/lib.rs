//! Differentially private zeroth-order optimization.
//!
//! The crate estimates gradients from paired loss evaluations along random
//! directions, clips and noises the per-sample scalars, and drives a
//! stagewise proximal loop with geometric schedules. A data-free saliency
//! pass can restrict and reshape the direction distribution before
//! training.
//!
//! Every random draw comes from a counter-based stream keyed by
//! `(seed, domain, stage, iteration, index)`, so runs are reproducible bit
//! for bit regardless of thread count.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod param;
pub mod privacy;
pub mod pruning;
pub mod rng;
pub mod stagewise;
pub mod zo;

pub use data::Dataset;
pub use error::{Error, Result};
pub use metrics::{MetricsLog, MetricsRow};
pub use param::{Direction, DirectionDistribution, DirectionSource, ParameterVector, SeededDirections};
pub use privacy::{BudgetLedger, Calibration, PrivacySpec, Regime};
pub use stagewise::{OptimizerState, RegMode, StageSchedule};
pub use zo::{LossEvaluator, Parallelism, Sample, ZoScale};

/// Keeps the guide's snippets compiling and passing as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/randomness.md")]
    struct Randomness;
    #[doc = include_str!("../../../book/src/estimator.md")]
    struct Estimator;
    #[doc = include_str!("../../../book/src/privacy.md")]
    struct Privacy;
    #[doc = include_str!("../../../book/src/stagewise.md")]
    struct Stagewise;
    #[doc = include_str!("../../../book/src/pruning.md")]
    struct Pruning;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
