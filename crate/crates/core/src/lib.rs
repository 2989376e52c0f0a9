//! Numerical laboratory for quasiconvexity at the boundary and DiPerna–Majda measures.

pub mod domains;
pub mod error;
pub mod integrands;
pub mod linalg;
pub mod measures;
pub(crate) mod par;
pub mod relaxation;
pub mod rng;
pub mod semicontinuity;
pub mod sequences;

pub use error::{Error, Result};
pub use integrands::Integrand;
pub use linalg::Matrix;
