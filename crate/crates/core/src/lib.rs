//! Sample-efficient estimation of a target Gaussian mean with help from
//! source tasks of lower variance, by iterated elimination of sources that
//! sit too far from the target.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elimination_curve;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod lower_bounds;
pub mod models;
pub mod multi_source;
pub mod oracles;
pub mod single_source;

pub use error::{Error, Result};
pub use estimators::GFunction;
pub use models::{build_instance, BudgetedSampler, ProblemInstance, SampleBatch, TaskParams};
pub use multi_source::{run_elimination, EliminationConfig, EliminationTrace, VarianceMode};
