//! Three-field topology-optimization toolkit: conic filtering, tanh and
//! subpixel-smoothed projections (first and second order), periodic
//! thermal homogenization with adjoint gradients, a quadratic CCSA
//! optimizer, geometric lengthscale constraints and a multi-seed study
//! harness.

pub mod bench;
pub mod calculus;
pub mod ccsa;
pub mod error;
pub mod fieldio;
pub mod geomcon;
pub mod grid_field;
pub mod homogenize;
pub mod projection;
pub mod synthetic;

pub use error::{Error, Result};
