//! Discretized operators, resolvent window scans and semigroup diagnostics for
//! individual maximum and anti-maximum principles.
//!
//! The layers build on each other: [`grid`] and [`cone`] define weighted grid
//! functions and the order relations on them, [`operators`] builds the operator
//! catalog, [`spectral`] finds the leading eigenpair, [`resolvent`] scans
//! windows around it, [`semigroup`] fits smoothing and domination exponents and
//! [`harness`] runs reproducible experiments on top.

// `!(x > 0.0)` style checks are NaN guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone;
pub mod error;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod operators;
pub mod random;
pub mod resolvent;
pub mod semigroup;
pub mod sparse;
pub mod spectral;

pub use cone::ConeTolerance;
pub use error::{LabError, Result};
pub use grid::{GridFunction, GridSpace};
pub use linalg::SolverConfig;
pub use operators::{BoundaryCondition, GridOperator};
pub use spectral::{leading_eigenpair, SpectralReport};
