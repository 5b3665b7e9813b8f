//! Numerical workbench for Gaussian beam quasimodes on Lorentzian product
//! cylinders `(0,T) x M`, together with the forward solvers and the
//! stationary-phase recovery pipeline built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! * [`poly`] - truncated multivariate jet arithmetic (the workhorse behind
//!   every Taylor expansion in the crate),
//! * [`expr`] - a small scalar expression language for metric and potential
//!   coefficients, with exact Taylor-mode evaluation,
//! * [`grid`] - space-time lattices, sampled fields and their binary format,
//! * [`spacetime`] - product metrics, Christoffel symbols, causal typing,
//! * [`causal`] - broken null geodesics, Fermi charts, reachable sets,
//! * [`beam`] - Riccati solutions, phase/amplitude hierarchies, quasimodes,
//! * [`wave`] - linear and semilinear forward solvers plus boundary traces,
//! * [`linearize`] - mixed finite differences of the solution map,
//! * [`recover`] - beam bundles, oscillatory integrals, coefficient recovery,
//! * [`config`], [`report`] - run configuration and deterministic reporting.

pub mod beam;
pub mod causal;
pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linearize;
pub mod poly;
pub mod recover;
pub mod report;
pub mod spacetime;
pub mod wave;

pub use error::{Error, Result};
