use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::covariance::CovarianceModel;
use crate::error::{Error, Result};

/// Law of the KL coefficients: zero mean, unit variance, symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientLaw {
    #[default]
    Gaussian,
    /// Uniform on `[−√3, √3]`.
    Uniform,
    /// `±1` with equal probability.
    Rademacher,
}

impl CoefficientLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CoefficientLaw::Gaussian => rng.sample(StandardNormal),
            CoefficientLaw::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
            CoefficientLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn sample_vec<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.sample(rng)))
    }
}

/// Truncated Karhunen–Loève prior `u = Σ_{i≤d} ξ_i √(σ_i/λ*) φ_i`.
#[derive(Debug, Clone)]
pub struct KlPrior {
    covariance: Arc<CovarianceModel>,
    truncation: usize,
    lambda_star: f64,
    law: CoefficientLaw,
    basis: DMatrix<f64>,
}

/// One prior draw: the nodal field and its KL coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct KlSample {
    pub field: DVector<f64>,
    pub coefficients: DVector<f64>,
}

impl KlPrior {
    pub fn new(
        covariance: Arc<CovarianceModel>,
        truncation: usize,
        lambda_star: f64,
        law: CoefficientLaw,
    ) -> Result<Self> {
        if truncation == 0 || truncation > covariance.dofs() {
            return Err(Error::InvalidParameter(format!(
                "truncation {truncation} must be in 1..={}",
                covariance.dofs()
            )));
        }
        if !(lambda_star > 0.0 && lambda_star.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_star must be > 0, got {lambda_star}"
            )));
        }
        let mut basis = covariance.eigenvectors().columns(0, truncation).into_owned();
        for c in 0..truncation {
            let w = (covariance.eigenvalues()[c] / lambda_star).sqrt();
            basis.column_mut(c).scale_mut(w);
        }
        Ok(KlPrior {
            covariance,
            truncation,
            lambda_star,
            law,
            basis,
        })
    }

    pub fn covariance(&self) -> &CovarianceModel {
        &self.covariance
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    pub fn law(&self) -> CoefficientLaw {
        self.law
    }

    /// Matrix `B = [√(σ_i/λ*) φ_i]` mapping coefficients to nodal values.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn field(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        &self.basis * coefficients
    }

    /// Draws ξ in descending-eigenvalue order, so priors sharing a stream
    /// share their leading coefficients.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> KlSample {
        let coefficients = self.law.sample_vec(self.truncation, rng);
        KlSample {
            field: self.field(&coefficients),
            coefficients,
        }
    }
}
