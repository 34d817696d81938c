//! Linear precoding for multi-device edge inference that maximizes the
//! coding rate reduction of the received features.
//!
//! Start with [`harness::run_scenario`] for complete experiments, or combine
//! [`feature_model`], [`channel`], [`objective`] and [`bca`] directly.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bca;
pub mod channel;
pub mod checks;
pub mod classifier;
pub mod error;
pub mod feature_model;
pub mod harness;
pub mod instance;
pub mod linalg;
pub mod objective;
pub mod pga;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/output-files.md")]
    mod output_files {}
}
