//! RF excitation pulse design by optimal control of the Bloch equation.
//!
//! The control `u = (u_x, u_y)` is optimized so that the magnetization at
//! read-out matches a desired slice profile. Exact discrete gradients and
//! Hessian actions come from adjoint and linearized Crank–Nicolson solves and
//! feed a matrix-free trust-region CG-Newton method.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod mat3;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod runner;
pub mod solvers;
pub mod targets;

pub use error::{Error, Result};
