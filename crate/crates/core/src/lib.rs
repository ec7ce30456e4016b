//! Koopman semigroups of continuous semiflows on sampled spaces of bounded
//! continuous observables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod characterize;
pub mod cli;
pub mod error;
pub mod koopman;
pub mod observables;
pub mod report;
pub mod scenario;
pub mod semiflow;
pub mod state;

pub use error::{LabError, Result};
pub use num_complex::Complex64;
