use nalgebra::{DMatrix, DVector};

use super::{LowerSolveReport, LowerSolver};
use crate::error::{Error, Result};
use crate::forward::SecondDifference;
use crate::linalg::solve_tridiagonal;

/// `u_λ = (Γ⁻¹ + λL⁻¹)⁻¹ Γ⁻¹ y` with `Γ = γ²I` and `L⁻¹ = −Δ_h`, solved as
/// the tridiagonal system `(I + λγ²(−Δ_h)) u = y`. `λ = 0` returns `y`.
#[derive(Debug, Clone)]
pub struct SignalTikhonov {
    regularizer: SecondDifference,
    noise_variance: f64,
}

impl SignalTikhonov {
    pub fn new(regularizer: SecondDifference, noise_std: f64) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise std must be > 0, got {noise_std}")));
        }
        Ok(SignalTikhonov {
            regularizer,
            noise_variance: noise_std * noise_std,
        })
    }

    fn system_solve(&self, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let s = lambda * self.noise_variance;
        let diag: Vec<f64> = self.regularizer.diag.iter().map(|d| 1.0 + s * d).collect();
        let off: Vec<f64> = self.regularizer.off.iter().map(|o| s * o).collect();
        Ok(DVector::from_vec(solve_tridiagonal(&diag, &off, rhs.as_slice())?))
    }

    fn check(lambda: f64) -> Result<()> {
        if lambda >= 0.0 && lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")))
        }
    }
}

impl LowerSolver for SignalTikhonov {
    fn dim(&self) -> usize {
        self.regularizer.len()
    }

    fn solve(&self, y: &DVector<f64>, lambda: f64, _warm: Option<&DVector<f64>>) -> Result<LowerSolveReport> {
        Self::check(lambda)?;
        let u = self.system_solve(lambda, y)?;
        let lu = self.regularizer.apply(&u);
        let r = &u - y;
        let grad = &r / self.noise_variance + &lu * lambda;
        let obj = 0.5 * r.norm_squared() / self.noise_variance + 0.5 * lambda * u.dot(&lu);
        Ok(LowerSolveReport::closed_form(u, obj, Some(grad.norm())))
    }

    fn dlambda(&self, _y: &DVector<f64>, lambda: f64, report: &LowerSolveReport) -> Result<DVector<f64>> {
        Self::check(lambda)?;
        let rhs = -self.regularizer.apply(&report.minimizer) * self.noise_variance;
        self.system_solve(lambda, &rhs)
    }
}

/// Literal dense evaluation of `(Γ⁻¹ + λL⁻¹)⁻¹ Γ⁻¹ y`; errors if `L` is
/// singular.
pub fn solve_signal_dense(
    gamma: &DMatrix<f64>,
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let l_inv = l
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular("regularization matrix L is singular".into()))?;
    let g_inv = gamma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("noise covariance is singular".into()))?;
    let m = &g_inv + l_inv * lambda;
    m.lu()
        .solve(&(g_inv * y))
        .ok_or_else(|| Error::Singular("(Γ⁻¹ + λL⁻¹) is singular".into()))
}
