//! Causal effects with an unmeasured confounder observed through two proxies.
//!
//! * [`ident_cat`]: categorical identification of `pr{y | do(x)}` by matrix
//!   adjustment, with rank diagnostics and proxy coarsening.
//! * [`nulltest`]: χ² test of the null of no effect of X on Y within
//!   confounder strata.
//! * [`ident_gauss`]: identification in the normal model from two proxy
//!   regressions.
//! * [`fredholm`]: discretized bridge equation with Tikhonov regularization
//!   and Picard diagnostics.
//! * [`dgp`]: latent-class and Gaussian data generators, exact oracles and
//!   Monte Carlo studies.

pub mod cli;
pub mod dgp;
pub mod error;
pub mod fredholm;
pub mod ident_cat;
pub mod ident_gauss;
pub mod linalg;
pub mod nulltest;
pub mod quadrature;
pub mod tabular;

pub use error::{Error, Result};
