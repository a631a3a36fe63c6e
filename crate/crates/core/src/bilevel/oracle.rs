use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sorted_eigen, sym_function};

/// Population quantities for the linear Gaussian model
/// `u ~ N(0, C₀/λ*)`, `y = Au + η`, `η ~ N(0, Γ)`.
///
/// With `D = C₀^(1/2) Aᵀ Γ^(−1/2)` and `Q_λ = (DDᵀ + λI)⁻¹` everything is
/// evaluated in the eigenbasis `W` of `DDᵀ`, where `Q_λ` is diagonal and
/// only the diagonal of `WᵀC₀W` enters the traces.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    eigenvalues: DVector<f64>,
    basis: DMatrix<f64>,
    c0_rotated: DMatrix<f64>,
    lambda_star: f64,
    normal_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityBounds {
    pub h_star: f64,
    pub l_star: f64,
    /// `[5λ*/6, 7λ*/6]`.
    pub region: (f64, f64),
}

impl LinearOracle {
    pub fn new(a: &DMatrix<f64>, gamma: &DMatrix<f64>, c0: &DMatrix<f64>, lambda_star: f64) -> Result<Self> {
        let (k, d) = a.shape();
        if gamma.shape() != (k, k) || c0.shape() != (d, d) {
            return Err(Error::InvalidParameter("dimension mismatch in linear oracle".into()));
        }
        if !(lambda_star > 0.0 && lambda_star.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda* must be > 0, got {lambda_star}")));
        }
        let gamma_inv_sqrt = sym_function(gamma, |x| 1.0 / x.sqrt());
        let c0_sqrt = sym_function(c0, |x| x.max(0.0).sqrt());
        let dmat = &c0_sqrt * a.transpose() * gamma_inv_sqrt;
        let ddt = &dmat * dmat.transpose();
        let (eigenvalues, basis) = sorted_eigen(&((&ddt + ddt.transpose()) * 0.5), true);
        let eigenvalues = eigenvalues.map(|v| v.max(0.0));
        let c0_rotated = basis.transpose() * c0 * &basis;
        let gamma_inv = gamma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("noise covariance".into()))?;
        let normal = a.transpose() * gamma_inv * a;
        let normal_norm = sorted_eigen(&((&normal + normal.transpose()) * 0.5), true).0[0].abs();
        Ok(LinearOracle {
            eigenvalues,
            basis,
            c0_rotated,
            lambda_star,
            normal_norm,
        })
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    /// Eigenvalues of `DDᵀ`, descending.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `λ_D`, the largest eigenvalue of `DDᵀ`.
    pub fn lambda_d(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `‖AᵀΓ⁻¹A‖`.
    pub fn normal_norm(&self) -> f64 {
        self.normal_norm
    }

    fn q(&self, lambda: f64) -> DVector<f64> {
        self.eigenvalues.map(|l| 1.0 / (l + lambda))
    }

    /// `Σ_i Λ_i C̃_ii q_i^p`.
    fn weighted_moment(&self, lambda: f64, p: i32) -> f64 {
        let q = self.q(lambda);
        (0..q.len())
            .map(|i| self.eigenvalues[i] * self.c0_rotated[(i, i)] * q[i].powi(p))
            .sum()
    }

    pub fn q_matrix(&self, lambda: f64) -> DMatrix<f64> {
        &self.basis * DMatrix::from_diagonal(&self.q(lambda)) * self.basis.transpose()
    }

    /// `P_k = d^{k−1}/dλ^{k−1} (Q C₀ Q)`, i.e.
    /// `P_k = (−1)^{k−1}(k−1)! Σ_{i+j=k+1} Q^i C₀ Q^j`, for `k = 1..4`.
    pub fn p_matrix(&self, k: u32, lambda: f64) -> DMatrix<f64> {
        assert!((1..=4).contains(&k), "P_k is defined for k = 1..4");
        let q = self.q(lambda);
        let n = q.len();
        let factorial: f64 = (1..k).map(f64::from).product();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let rotated = DMatrix::from_fn(n, n, |a, b| {
            let s: f64 = (1..=k as i32)
                .map(|i| q[a].powi(i) * q[b].powi(k as i32 + 1 - i))
                .sum();
            sign * factorial * s * self.c0_rotated[(a, b)]
        });
        &self.basis * rotated * self.basis.transpose()
    }

    /// `DDᵀ` in the original basis.
    pub fn ddt(&self) -> DMatrix<f64> {
        &self.basis * DMatrix::from_diagonal(&self.eigenvalues) * self.basis.transpose()
    }

    /// `F(λ) = E‖u_λ(y) − u‖² = Tr(C₀ Q (λ²/λ* I + DDᵀ) Q)`.
    pub fn population_loss(&self, lambda: f64) -> f64 {
        let q = self.q(lambda);
        let s = lambda * lambda / self.lambda_star;
        (0..q.len())
            .map(|i| self.c0_rotated[(i, i)] * q[i] * q[i] * (s + self.eigenvalues[i]))
            .sum()
    }

    /// `∂_λF = (1 − λ/λ*) Tr(P₂DDᵀ)`.
    pub fn population_gradient(&self, lambda: f64) -> f64 {
        (1.0 - lambda / self.lambda_star) * self.trace_p2_ddt(lambda)
    }

    /// `∂²_λF = Tr(DDᵀ((1 − λ/λ*)P₃ − P₂/λ*))`.
    pub fn population_hessian(&self, lambda: f64) -> f64 {
        let t2 = self.trace_p2_ddt(lambda);
        let t3 = 6.0 * self.weighted_moment(lambda, 4);
        (1.0 - lambda / self.lambda_star) * t3 - t2 / self.lambda_star
    }

    /// `Tr(P₂DDᵀ) = −2 Σ Λ_i C̃_ii q_i³ ≤ 0`.
    pub fn trace_p2_ddt(&self, lambda: f64) -> f64 {
        -2.0 * self.weighted_moment(lambda, 3)
    }

    /// Curvature and slope constants of the local convexity argument.
    /// `upper` is `λ_u` of the admissible interval.
    pub fn convexity_region_bounds(&self, upper: f64) -> ConvexityBounds {
        let (ld, ls, nn) = (self.lambda_d(), self.lambda_star, self.normal_norm);
        ConvexityBounds {
            h_star: ld * ld / ((ld + 2.0 * ls).powi(2) * ls * nn),
            l_star: 2.0 * ld * ld / (3.0 * (ld + upper).powi(3) * nn),
            region: (5.0 * ls / 6.0, 7.0 * ls / 6.0),
        }
    }
}

/// `C_n = min_{k≤n} max{Π_{j=k+1}^n (1 − cβ_j), aβ_k/c}` for `n = 1..=len`.
pub fn c_n_sequence(betas: &[f64], a: f64, c: f64) -> Result<Vec<f64>> {
    if !(a > 0.0 && c > 0.0) {
        return Err(Error::InvalidParameter("a and c must be positive".into()));
    }
    if let Some(j) = betas.iter().position(|&b| !(b > 0.0) || c * b >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < c·beta_j < 1, violated at j = {}",
            j + 1
        )));
    }
    // prefix[j] = Σ_{i<j} ln(1 − cβ_i), so Π_{j=k+1}^n = exp(prefix[n] − prefix[k]).
    let mut prefix = vec![0.0; betas.len() + 1];
    for (j, b) in betas.iter().enumerate() {
        prefix[j + 1] = prefix[j] + (-c * b).ln_1p();
    }
    Ok((1..=betas.len())
        .map(|n| {
            (1..=n)
                .map(|k| (prefix[n] - prefix[k]).exp().max(a * betas[k - 1] / c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}
