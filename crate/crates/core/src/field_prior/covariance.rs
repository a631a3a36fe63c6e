use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mesh::{axis_laplacian, Mesh};
use crate::error::{Error, Result};
use crate::linalg::{fix_sign, sorted_eigen};

/// Discretized Matérn-type covariance `β(τ²I − Δ_h)^(−α)`.
///
/// Eigenvalues `σ_i = β(τ² + μ_i)^(−α)` come from the eigenvalues `μ_i` of
/// `−Δ_h` and are stored in descending order. Eigenvectors `φ_i` are
/// orthonormal in the mesh inner product `h^dim ⟨·,·⟩`, so the covariance of
/// nodal values is `K = Φ diag(σ) Φᵀ = h^(−dim) β(τ²I − Δ_h)^(−α)`.
///
/// In two dimensions the eigenpairs are tensor products of the 1D axis
/// eigenpairs, which fixes an ordering for degenerate eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub(crate) beta: f64,
    pub(crate) tau: f64,
    pub(crate) alpha: f64,
    pub(crate) mesh: Mesh,
    pub(crate) laplacian_eigenvalues: DVector<f64>,
    pub(crate) eigenvalues: DVector<f64>,
    pub(crate) eigenvectors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceParams {
    pub beta: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl CovarianceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

pub(crate) fn sigma(p: &CovarianceParams, mu: f64) -> f64 {
    p.beta * (p.tau * p.tau + mu).powf(-p.alpha)
}

/// Builds the covariance model on `mesh`.
///
/// Errors with [`Error::NotSpd`] when `τ² + μ_min` is not positive, which
/// happens for Neumann meshes with `τ = 0`.
pub fn build_covariance(mesh: &Mesh, params: CovarianceParams) -> Result<CovarianceModel> {
    params.validate()?;
    let n = mesh.axis_unknowns();
    let h = mesh.spacing();
    let (mu1, v1) = sorted_eigen(&axis_laplacian(n, h, mesh.boundary()), false);
    let mu_scale = mu1[n - 1].abs().max(1.0);
    let shift_min = params.tau * params.tau + mu1[0];
    if shift_min <= 1e-12 * mu_scale {
        return Err(Error::NotSpd {
            smallest: shift_min,
        });
    }

    // (μ, axis indices) sorted ascending in μ with index tie-break.
    let mut pairs: Vec<(f64, usize, usize)> = if mesh.dimension() == 1 {
        (0..n).map(|a| (mu1[a], a, 0)).collect()
    } else {
        let mut p = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                p.push((mu1[a] + mu1[b], a, b));
            }
        }
        p
    };
    pairs.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((x.1 + x.2).cmp(&(y.1 + y.2)))
            .then(x.2.cmp(&y.2))
    });

    let dofs = mesh.dofs();
    let norm = mesh.cell_volume().sqrt();
    let mut vectors = DMatrix::zeros(dofs, dofs);
    for (c, &(_, a, b)) in pairs.iter().enumerate() {
        let mut v = if mesh.dimension() == 1 {
            v1.column(a).into_owned()
        } else {
            v1.column(b).kronecker(&v1.column(a))
        };
        fix_sign(&mut v);
        vectors.set_column(c, &(v / norm));
    }
    let mu = DVector::from_iterator(dofs, pairs.iter().map(|p| p.0));
    let eigenvalues = mu.map(|m| sigma(&params, m));
    if let Some(bad) = eigenvalues.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::NotSpd { smallest: *bad });
    }
    Ok(CovarianceModel {
        beta: params.beta,
        tau: params.tau,
        alpha: params.alpha,
        mesh: mesh.clone(),
        laplacian_eigenvalues: mu,
        eigenvalues,
        eigenvectors: vectors,
    })
}

impl CovarianceModel {
    pub fn params(&self) -> CovarianceParams {
        CovarianceParams {
            beta: self.beta,
            tau: self.tau,
            alpha: self.alpha,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofs(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `σ_i`, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `μ_i` of `−Δ_h`, matching the order of [`Self::eigenvalues`].
    pub fn laplacian_eigenvalues(&self) -> &DVector<f64> {
        &self.laplacian_eigenvalues
    }

    /// Columns `φ_i`, orthonormal in the mesh inner product.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Trace of the covariance operator, `Σ σ_i`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.sum()
    }

    pub fn mesh_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.mesh.cell_volume() * a.dot(b)
    }

    fn spectral(&self, f: impl Fn(f64) -> f64, scale: f64) -> DMatrix<f64> {
        let phi = &self.eigenvectors;
        let mut scaled = phi.clone();
        for (c, s) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(c).scale_mut(f(*s));
        }
        scaled * phi.transpose() * scale
    }

    /// Nodal covariance `K = Φ diag(σ) Φᵀ`, the `C₀` used by the solvers.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.spectral(|s| s, 1.0)
    }

    /// `K⁻¹ = h^(2 dim) Φ diag(1/σ) Φᵀ`.
    pub fn precision(&self) -> DMatrix<f64> {
        let w = self.mesh.cell_volume();
        self.spectral(|s| 1.0 / s, w * w)
    }

    /// Symmetric square root `K^(1/2) = h^(dim/2) Φ diag(√σ) Φᵀ`.
    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        self.spectral(f64::sqrt, self.mesh.cell_volume().sqrt())
    }

    /// Matrix of the operator `β(τ²I − Δ_h)^(−α)` on nodal vectors.
    pub fn operator_matrix(&self) -> DMatrix<f64> {
        self.spectral(|s| s, self.mesh.cell_volume())
    }
}
