//! Estimation and inference for direct and indirect effects of stochastic
//! interventions on an exposure: incremental propensity score interventions,
//! exponential tilts, and shift-style modified treatment policies.
//!
//! The crate provides substitution, reweighted, and cross-fitted efficient
//! one-step estimators of the mediated mean E[Y(A_delta, Z)], an effect
//! decomposition into direct and indirect parts, pointwise Wald and uniform
//! multiplier-bootstrap inference, and a simulation harness with an exact
//! enumeration oracle for its discrete benchmark process.

pub mod crossfit;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod interventions;
pub mod learners;
pub mod model;
pub mod numeric;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    ColumnRoles, EffectReport, EifRecord, ExposureKind, InterventionSpec, Matrix,
    ObservedDataset, RawTable,
};
