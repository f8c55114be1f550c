//! Exact certification of midpoint-anchored disagreement bounds.
//!
//! Two independently trained predictors `f1`, `f2` disagree by
//! `D(f1, f2) = E||f1(x) - f2(x)||²`. The midpoint identity ties that
//! quantity to how much the averaged predictor improves on either model,
//! and every bound in this crate follows by showing the average lies in a
//! class whose optimal risk is known. All populations have finite support,
//! so each expectation is an exact weighted sum and every inequality can be
//! checked per instance.
//!
//! Modules:
//! - [`population`]: predictors, norms, risks, disagreement, anchor checks.
//! - [`stacking`]: least squares over sampled spans, agreement and tightness experiments.
//! - [`boosting`]: weak-learner classes, atomic norms, SQ-oracle gradient boosting.
//! - [`frankwolfe`]: strongly convex losses and Frank–Wolfe over atomic-norm balls.
//! - [`closure`]: regression trees and ReLU DAG networks with their midpoint constructions.
//! - [`report`]: bound reports and the traceability registry.

// `!(a <= b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod closure;
pub mod error;
pub mod frankwolfe;
pub mod lstsq;
pub mod population;
pub mod report;
pub mod seed;
pub mod stacking;
pub mod stats;

pub use error::{Error, Result};
pub use population::{
    check_anchor_bound, check_local_curve_bound, check_midpoint_identity, disagreement, midpoint,
    mse, weighted_norm, AnchorCertificate, BoundName, Point, Population, Predictor, Tolerances,
};
