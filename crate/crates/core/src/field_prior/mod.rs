//! Discretized Gaussian-field priors on uniform 1D/2D meshes.
//!
//! The covariance `C₀ = β(τ²I − Δ_h)^(−α)` is diagonal in the eigenbasis of
//! the discrete Laplacian; samples come from the truncated KL expansion with
//! Gaussian or bounded symmetric coefficient laws.

mod covariance;
mod export;
mod kl;
mod mesh;

pub use covariance::{build_covariance, CovarianceModel, CovarianceParams};
pub use export::CovarianceHeader;
pub use kl::{CoefficientLaw, KlPrior, KlSample};
pub use mesh::{assemble_laplacian, axis_laplacian, Boundary, Mesh};
