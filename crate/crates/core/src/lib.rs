//! Stochastic Fredholm and Volterra-Fredholm integral equations solved as
//! fixed-point iterations, where every iteration is one affine (or nonlinear)
//! network layer with tied weights.
//!
//! The crate is organised bottom-up:
//!
//! * [`stochastic`] – counter-based random streams, Brownian and jump paths.
//! * [`grid`] – uniform grids, kernels and assembly of the discretized operator.
//! * [`fixed_point`] – Picard / Krasnosel'skii–Mann iteration, depth and error bounds.
//! * [`networks`] – linear SFNN, nonlinear DSFNN and the Volterra–Fredholm operator.
//! * [`neural_kernel`] – a small tanh network parameterizing a Fredholm kernel.
//! * [`black_scholes`], [`contagion`], [`merton`] – the three financial applications.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod black_scholes;
pub mod contagion;
pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod linalg;
pub mod merton;
pub mod networks;
pub mod neural_kernel;
pub mod quadrature;
pub mod stochastic;

pub use error::{Error, Result};
pub use fixed_point::{FixedPointConfig, IterationTrace, KappaSchedule, Norm};
pub use grid::{Grid, KernelSpec, LayerParams};
pub use stochastic::{BrownianPath, JumpPath, LogNormalParams, RandomSeed};
