//! Hybrid physics-informed neural network for one-dimensional conservation laws.
//!
//! A discrete-time PINN advances `u_t + f(u)_x = nu u_xx + h` with an implicit
//! Gauss–Legendre Runge–Kutta scheme. The convection term is differentiated
//! exactly through the network where the solution is smooth and replaced by a
//! fifth-order WENO-Z flux difference where a scale-separation indicator flags
//! a discontinuity.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod grid;
pub mod hpinn;
pub mod irk;
pub mod network;
pub mod pde;
pub mod refsolver;
pub mod weno;

pub use grid::{Extension, GridField};
pub use pde::{Flux, PdeSpec};
