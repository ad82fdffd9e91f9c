//! Decision-focused learning for integer linear programs.
//!
//! A neural network predicts the cost vector of a linear program over a
//! standard-form polytope `{x : Ax = b, x >= 0}`. The prediction is fed to a
//! differentiable layer that solves the quadratically regularized relaxation
//! with Davis-Yin three-operator splitting, and the network is trained with
//! Jacobian-free backpropagation through the fixed point.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dys;
pub mod error;
pub mod jfb;
pub mod polytope;
pub mod predictor;
pub mod problems;
pub mod train;
pub mod verify;

pub use dys::{solve, solve_fixed_point, DysConfig, DysState};
pub use error::{Error, Result};
pub use polytope::StandardFormPolytope;
pub use problems::{DatasetKind, Problem};
