//! Grid minimization of one-, two- and multi-phase Bernoulli functionals
//! and numerical diagnostics for the quadrature surfaces they produce.
//!
//! Everything here is `no_std` with `alloc`; file formats and the command
//! line live in the `qsurf` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod boundary;
pub mod energy;
mod error;
pub mod grid;
pub mod measure;
pub mod minimize;
pub mod quadrature;
pub mod reference;

pub use error::{Error, Result};
pub use grid::{build_grid, Grid, Point, ScalarField};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
