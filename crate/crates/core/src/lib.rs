//! Binary control problems regularized by the fractional perimeter on a
//! uniform grid of the unit square.

pub mod classic;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod maxflow;
pub mod pde;
pub mod quadrature;
pub mod regularizer;
pub mod subproblem;
pub mod trust_region;
pub mod variations;

pub use error::{Error, Result};
