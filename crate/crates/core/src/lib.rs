//! Sensor orientation design for TOA, TDOA, RSS and AOA localization, and a
//! Monte Carlo harness for the resulting estimators.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod error;
pub mod linalg;
pub mod model;
pub mod par;
pub mod prox;
pub mod sanity;
pub mod sim;

pub use admm::{solve, solve_from, Init, PlacementResult, SolverConfig, Termination, TraceRecord};
pub use error::{Error, Result};
pub use model::{
    build_phi, criterion_value, fim, objective, theoretical_optimum, Criterion, MappingMatrix, ModelKind, ModelSpec,
    NoiseCovariance, OrientationMatrix,
};
