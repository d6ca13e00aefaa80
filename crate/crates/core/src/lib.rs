//! Portfolio-variance forecasting by combining a univariate GARCH fit on
//! portfolio returns with a multivariate GARCH fit on asset returns through
//! forecast reconciliation, plus the evaluation machinery (loss functions,
//! Diebold-Mariano tests, model confidence sets) and a replicated Monte
//! Carlo / rolling-window experiment harness.

pub mod dgp;
pub mod eval;
pub mod harness;
pub mod matrix;
pub mod reconcile;
pub mod models;
mod optimize;
pub mod rng;

pub use matrix::{
    aggregation_vector, cov_to_cor, duplication, duplication_pinv, kron, HalfVec, MatrixError,
    SymMatrix,
};
