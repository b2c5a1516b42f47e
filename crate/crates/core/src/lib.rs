//! Robust compressed-sensing recovery.
//!
//! Recovers a sparse coefficient vector `x` from measurements `y = Φx + n`
//! corrupted by impulsive noise, by minimizing a robust data-fit term plus an
//! ℓ1 (or row-wise ℓ2/ℓ1) penalty. Solvers: accelerated proximal gradient
//! (FISTA) and generalized ADMM for the Huber loss, a nested
//! majorize-minimize baseline, an affine-constrained ADMM, a robust elastic
//! net, an ℓ1-loss ADMM and multi-task variants. [`regpath`] selects the
//! regularization weight along a warm-started path.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases
//! below fix the common double-precision case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod prox;
pub mod regpath;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SensingProblem64 = model::SensingProblem<f64>;
pub type HuberParams64 = model::HuberParams<f64>;
pub type Residual64 = model::Residual<f64>;
pub type SolverOptions64 = solvers::SolverOptions<f64>;
pub type Solution64 = solvers::Solution<f64>;
pub type PathConfig64 = regpath::PathConfig<f64>;
pub type MultiTaskProblem64 = solvers::MultiTaskProblem<f64>;
