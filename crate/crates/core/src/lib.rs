//! Doubly robust estimation of linear functionals of solutions to ill-posed
//! conditional moment problems.
//!
//! Nuisances are fitted by kernel adversarial regression with plain,
//! iterated, and version-space constrained Tikhonov regularization.

pub mod dgp;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod random;
pub mod rkhs;
pub mod spectral_oracle;

pub use error::{Error, Result};
