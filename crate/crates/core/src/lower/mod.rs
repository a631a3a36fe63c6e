//! Lower-level Tikhonov problems `u_λ(y) = argmin Ψ(λ, u, y)` with
//! `Ψ = ½‖G(u) − y‖²_Γ + (λ/2)‖u‖²_{C₀}`, where `‖u‖²_{C₀} = uᵀC₀⁻¹u`.
//!
//! Linear models have closed forms; KL-coefficient models use damped
//! Gauss–Newton with the identity as prior precision. Every solver also
//! provides `∂_λ u_λ`, exactly for linear problems and through the
//! Gauss–Newton Hessian otherwise.

mod gauss_newton;
mod linear;
mod signal;

pub use gauss_newton::{GaussNewton, GaussNewtonOptions};
pub use linear::{DenseTikhonov, SpectralTikhonov};
pub use signal::{solve_signal_dense, SignalTikhonov};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerSolveReport {
    pub minimizer: DVector<f64>,
    pub iterations: usize,
    /// `‖∇_u Ψ‖` at the minimizer, when the solver computes it.
    pub gradient_norm: Option<f64>,
    pub objective: f64,
    pub converged: bool,
}

impl LowerSolveReport {
    pub(crate) fn closed_form(minimizer: DVector<f64>, objective: f64, gradient_norm: Option<f64>) -> Self {
        LowerSolveReport {
            minimizer,
            iterations: 1,
            gradient_norm,
            objective,
            converged: true,
        }
    }
}

pub trait LowerSolver: Send + Sync {
    /// Dimension of the unknown `u` (or of the KL coefficients).
    fn dim(&self) -> usize;

    /// Solves the lower problem; `warm` seeds iterative solvers.
    fn solve(&self, y: &DVector<f64>, lambda: f64, warm: Option<&DVector<f64>>)
        -> Result<LowerSolveReport>;

    /// `∂_λ u_λ(y)` at a converged report for the same `(y, λ)`.
    fn dlambda(&self, y: &DVector<f64>, lambda: f64, report: &LowerSolveReport)
        -> Result<DVector<f64>>;

    fn solve_u(&self, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        Ok(self.solve(y, lambda, None)?.minimizer)
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")))
    }
}

/// Central difference `(u_{λ+h} − u_{λ−h}) / 2h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralDifference {
    pub value: DVector<f64>,
    pub plus: LowerSolveReport,
    pub minus: LowerSolveReport,
    /// Set when either perturbed solve did not converge.
    pub flagged: bool,
}

/// Central-difference approximation of `∂_λ u_λ(y)`; both perturbed solves
/// are warm-started from `warm` (normally the minimizer at `λ`).
pub fn dlambda_u_central(
    solver: &dyn LowerSolver,
    y: &DVector<f64>,
    lambda: f64,
    h: f64,
    warm: Option<&DVector<f64>>,
) -> Result<CentralDifference> {
    if !(h > 0.0) || !(lambda - h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "central difference needs 0 < h < lambda (h={h}, lambda={lambda})"
        )));
    }
    let plus = solver.solve(y, lambda + h, warm)?;
    let minus = solver.solve(y, lambda - h, warm)?;
    let value = (&plus.minimizer - &minus.minimizer) / (2.0 * h);
    let flagged = !(plus.converged && minus.converged);
    Ok(CentralDifference {
        value,
        plus,
        minus,
        flagged,
    })
}
