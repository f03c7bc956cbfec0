//! Stochastic Galerkin finite elements for obstacle problems with random
//! coefficient, source and obstacle.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem_spatial;
pub mod function;
pub mod lcp_solver;
pub mod mc_baseline;
pub mod mesh;
pub mod par;
pub mod param_space;
pub mod problems;
pub mod quadrature;
pub mod random_field;
pub mod runner;
pub mod sg_system;
pub mod statistics;
pub mod sparse;

pub use error::{Error, Result};
