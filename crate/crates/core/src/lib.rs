//! Adversarial influence functions (AIF) for multivariate M-estimators.
//!
//! The crate computes how fast an adversary who may move every data point
//! within an `ℓp` budget can shift an M-estimate, builds that adversary's
//! optimal perturbation, and designs location-scale estimators that trade
//! adversarial sensitivity against classical outlier robustness.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aif;
pub mod data;
pub mod density;
pub mod designer;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod location_scale;
pub mod numerics;
pub mod regression;

pub use aif::{compute_aif, AifReport, StackedJacobians};
pub use data::{DataMatrix, ParamVector};
pub use density::BaseDensity;
pub use error::{AifError, Result};
pub use estimator::{solve, EstimatingEquations, InitialTheta, MEstimatorSpec, SolveConfig};
pub use location_scale::LocationScaleSpec;
pub use regression::{RegressionData, RegressionScheme};
