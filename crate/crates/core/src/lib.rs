//! Weighted conformal prediction.
//!
//! Distribution-free prediction intervals built from quantiles of
//! nonconformity scores. When test covariates follow a different
//! distribution than the training covariates, the scores are reweighted by
//! the likelihood ratio between the two covariate distributions, which keeps
//! the marginal coverage guarantee intact.
//!
//! Module map:
//!
//! * [`wquantile`]: weighted discrete distributions with an optional atom at
//!   `+inf`, and their quantiles.
//! * [`scores`]: least-squares regression and residual nonconformity scores.
//! * [`conformal`]: full and split conformal bands, weighted and unweighted.
//! * [`wexch`]: exact permutation placement probabilities for general weighted
//!   exchangeable data (small samples only).
//! * [`shiftweights`]: oracle tilt weights, classifier-estimated odds weights
//!   and the effective sample size.
//! * [`localcov`]: kernel-localized conformal bands around a fixed center.
//! * [`harness`]: dataset ingestion, the repeated-split experiment and report
//!   output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod localcov;
pub mod scores;
pub mod shiftweights;
pub mod wexch;
pub mod wquantile;

pub use conformal::{GridSet, PredictionSet, SplitInterval, YGrid};
pub use data::{Covariates, Dataset};
pub use error::{ConformalError, Result};
pub use scores::{BaseAlgorithm, LinearRegressor, ScoreFn};
pub use shiftweights::{LogisticClassifier, WeightFn};
pub use wquantile::WeightedDiscreteDist;
