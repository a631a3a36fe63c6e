//! Learning Tikhonov regularization parameters from training data.
//!
//! The crate is organised bottom-up:
//!
//! - [`field_prior`]: discretized Gaussian-field priors and KL sampling.
//! - [`forward`]: Laplace, Darcy, eikonal and signal forward models.
//! - [`lower`]: lower-level Tikhonov solvers and their λ-derivatives.
//! - [`bilevel`]: offline ERM, projected bilevel SGD and linear-Gaussian oracles.
//! - [`harness`]: presets, datasets, Monte Carlo studies and CSV/JSON output.

pub mod bilevel;
pub mod error;
pub mod field_prior;
pub mod forward;
pub mod harness;
pub mod linalg;
pub mod lower;
pub mod rng;

pub use error::{Error, Result};
