use nalgebra::{DMatrix, DVector};

use super::{check_lambda, LowerSolveReport, LowerSolver};
use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, sorted_eigen, spd_solve_vec, sym_function};

/// Closed-form Tikhonov solve `(AᵀΓ⁻¹A + λC₀⁻¹)⁻¹AᵀΓ⁻¹y` with dense
/// factorizations; the reference implementation for linear problems.
#[derive(Debug, Clone)]
pub struct DenseTikhonov {
    a: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    normal: DMatrix<f64>,
    at_gamma_inv: DMatrix<f64>,
}

impl DenseTikhonov {
    /// `gamma` is the noise covariance Γ, `prior_precision` is C₀⁻¹.
    pub fn new(a: DMatrix<f64>, gamma: &DMatrix<f64>, prior_precision: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        let d = a.ncols();
        if gamma.shape() != (k, k) || prior_precision.shape() != (d, d) {
            return Err(Error::InvalidParameter("dimension mismatch in Tikhonov problem".into()));
        }
        let gamma_inv = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("noise covariance is not SPD".into()))?
            .inverse();
        if prior_precision.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("prior precision is not SPD".into()));
        }
        let at_gamma_inv = a.transpose() * &gamma_inv;
        let normal = &at_gamma_inv * &a;
        Ok(DenseTikhonov {
            a,
            gamma_inv,
            prior_precision,
            normal,
            at_gamma_inv,
        })
    }

    /// Cached `AᵀΓ⁻¹A`.
    pub fn normal_matrix(&self) -> &DMatrix<f64> {
        &self.normal
    }

    pub fn system(&self, lambda: f64) -> DMatrix<f64> {
        &self.normal + &self.prior_precision * lambda
    }

    pub fn objective(&self, y: &DVector<f64>, lambda: f64, u: &DVector<f64>) -> f64 {
        let r = &self.a * u - y;
        0.5 * (r.transpose() * &self.gamma_inv * &r)[0]
            + 0.5 * lambda * (u.transpose() * &self.prior_precision * u)[0]
    }

    pub fn gradient(&self, y: &DVector<f64>, lambda: f64, u: &DVector<f64>) -> DVector<f64> {
        &self.normal * u - &self.at_gamma_inv * y + &self.prior_precision * u * lambda
    }

    fn solve_system(&self, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.system(lambda);
        spd_solve_vec(&m, rhs, lambda).map_err(|e| match e {
            Error::Factorization { .. } => Error::Factorization {
                lambda,
                condition: condition_estimate(&m),
            },
            other => other,
        })
    }
}

impl LowerSolver for DenseTikhonov {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn solve(&self, y: &DVector<f64>, lambda: f64, _warm: Option<&DVector<f64>>) -> Result<LowerSolveReport> {
        check_lambda(lambda)?;
        let u = self.solve_system(lambda, &(&self.at_gamma_inv * y))?;
        let g = self.gradient(y, lambda, &u).norm();
        let obj = self.objective(y, lambda, &u);
        Ok(LowerSolveReport::closed_form(u, obj, Some(g)))
    }

    fn dlambda(&self, _y: &DVector<f64>, lambda: f64, report: &LowerSolveReport) -> Result<DVector<f64>> {
        check_lambda(lambda)?;
        let rhs = -(&self.prior_precision * &report.minimizer);
        self.solve_system(lambda, &rhs)
    }
}

/// Tikhonov solves in the eigenbasis of `Γ^(−1/2) A C₀ Aᵀ Γ^(−1/2) = U Λ Uᵀ`.
///
/// With `z = Γ^(−1/2) y` and `E = C₀ Aᵀ Γ^(−1/2) U Λ^(−1/2)`,
/// `u_λ = E diag(√Λ/(Λ+λ)) Uᵀ z` and
/// `∂_λ u_λ = −E diag(√Λ/(Λ+λ)²) Uᵀ z`. Only the `r` nonzero eigenvalues
/// are kept, so each solve costs `O(r(K + d))` after setup and no inverse of
/// `C₀` is formed.
#[derive(Debug, Clone)]
pub struct SpectralTikhonov {
    whiten: DMatrix<f64>,
    spectrum: DVector<f64>,
    u_basis: DMatrix<f64>,
    e_basis: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl SpectralTikhonov {
    pub fn new(a: &DMatrix<f64>, gamma: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if gamma.shape() != (k, k) || c0.shape() != (a.ncols(), a.ncols()) {
            return Err(Error::InvalidParameter("dimension mismatch in Tikhonov problem".into()));
        }
        if gamma.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("noise covariance is not SPD".into()));
        }
        let whiten = sym_function(gamma, |x| 1.0 / x.sqrt());
        let wa = &whiten * a;
        let s = &wa * c0 * wa.transpose();
        let s = (&s + s.transpose()) * 0.5;
        let (vals, vecs) = sorted_eigen(&s, true);
        let top = vals.max().max(0.0);
        let r = vals.iter().take_while(|&&v| v > 1e-12 * top).count();
        if r == 0 {
            return Err(Error::InvalidParameter("forward operator has zero range".into()));
        }
        let spectrum = vals.rows(0, r).into_owned();
        let u_basis = vecs.columns(0, r).into_owned();
        let mut e_basis = c0 * wa.transpose() * &u_basis;
        for i in 0..r {
            e_basis.column_mut(i).scale_mut(1.0 / spectrum[i].sqrt());
        }
        let gram = e_basis.transpose() * &e_basis;
        Ok(SpectralTikhonov {
            whiten,
            spectrum,
            u_basis,
            e_basis,
            gram,
        })
    }

    /// Nonzero eigenvalues `Λ_i`, descending.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    pub fn rank(&self) -> usize {
        self.spectrum.len()
    }

    /// `E`, `d × r`.
    pub fn e_basis(&self) -> &DMatrix<f64> {
        &self.e_basis
    }

    /// `EᵀE`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Data features `a = √Λ ∘ Uᵀ Γ^(−1/2) y`, so `u_λ = E (a / (Λ + λ))`.
    pub fn features(&self, y: &DVector<f64>) -> DVector<f64> {
        let t = self.u_basis.transpose() * (&self.whiten * y);
        t.component_mul(&self.spectrum.map(f64::sqrt))
    }

    /// Maps whitened-data coordinates `Uᵀz` to features.
    pub fn features_from_projection(&self, projected: &DVector<f64>) -> DVector<f64> {
        projected.component_mul(&self.spectrum.map(f64::sqrt))
    }

    /// `Uᵀ Γ^(−1/2)`, the projection used by [`Self::features`].
    pub fn data_projection(&self) -> DMatrix<f64> {
        self.u_basis.transpose() * &self.whiten
    }

    fn combine(&self, a: &DVector<f64>, weights: impl Fn(f64) -> f64) -> DVector<f64> {
        let c = DVector::from_iterator(
            self.rank(),
            a.iter().zip(self.spectrum.iter()).map(|(ai, l)| ai * weights(*l)),
        );
        &self.e_basis * c
    }
}

impl LowerSolver for SpectralTikhonov {
    fn dim(&self) -> usize {
        self.e_basis.nrows()
    }

    fn solve(&self, y: &DVector<f64>, lambda: f64, _warm: Option<&DVector<f64>>) -> Result<LowerSolveReport> {
        check_lambda(lambda)?;
        let a = self.features(y);
        let u = self.combine(&a, |l| 1.0 / (l + lambda));
        // In whitened SVD coordinates the objective separates per mode:
        // c = a/(Λ+λ), residual √Λ c − Uᵀz, plus the part of z outside range(U).
        let z = &self.whiten * y;
        let proj = self.u_basis.transpose() * &z;
        let outside = z.norm_squared() - proj.norm_squared();
        let mut obj = 0.5 * outside.max(0.0);
        for i in 0..self.rank() {
            let l = self.spectrum[i];
            let c = a[i] / (l + lambda);
            obj += 0.5 * (l.sqrt() * c - proj[i]).powi(2) + 0.5 * lambda * c * c;
        }
        Ok(LowerSolveReport::closed_form(u, obj, None))
    }

    fn dlambda(&self, y: &DVector<f64>, lambda: f64, _report: &LowerSolveReport) -> Result<DVector<f64>> {
        check_lambda(lambda)?;
        let a = self.features(y);
        Ok(self.combine(&a, |l| -1.0 / ((l + lambda) * (l + lambda))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::dlambda_u_central;
    use crate::rng::stream;
    use rand::Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let mut rng = stream(seed, &[]);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let gamma = random_spd(5, &mut rng);
        let c0 = random_spd(3, &mut rng);
        let y = DVector::from_fn(5, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        (a, gamma, c0, y)
    }

    #[test]
    fn scalar_closed_form() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let s = DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap();
        let y = DVector::from_element(1, 2.0);
        let r = s.solve(&y, 1.0, None).unwrap();
        assert!((r.minimizer[0] - 1.0).abs() < 1e-15);
        let du = s.dlambda(&y, 1.0, &r).unwrap();
        assert!((du[0] + 0.5).abs() < 1e-15);
        let zero = s.solve(&DVector::zeros(1), 1.0, None).unwrap();
        assert_eq!(zero.minimizer[0], 0.0);
        assert_eq!(s.dlambda(&DVector::zeros(1), 1.0, &zero).unwrap()[0], 0.0);
    }

    #[test]
    fn dense_matches_generic_quadratic_minimization() {
        for seed in 0..5 {
            let (a, gamma, c0, y) = instance(seed);
            let lambda = 0.7;
            let p = c0.clone().try_inverse().unwrap();
            let s = DenseTikhonov::new(a.clone(), &gamma, p.clone()).unwrap();
            let u = s.solve_u(&y, lambda).unwrap();
            // independent route: stack the quadratic as least squares
            // min ‖[Γ^(−1/2)A; √λ P^(1/2)] u − [Γ^(−1/2)y; 0]‖² solved by QR
            let gw = sym_function(&gamma, |x| 1.0 / x.sqrt());
            let ph = sym_function(&p, f64::sqrt) * lambda.sqrt();
            let mut big = DMatrix::zeros(8, 3);
            big.view_mut((0, 0), (5, 3)).copy_from(&(&gw * &a));
            big.view_mut((5, 0), (3, 3)).copy_from(&ph);
            let mut rhs = DVector::zeros(8);
            rhs.rows_mut(0, 5).copy_from(&(&gw * &y));
            let qr = big.qr();
            let oracle = qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs)).unwrap();
            assert!((&u - &oracle).norm() <= 1e-10 * oracle.norm().max(1.0));
            let res = s.gradient(&y, lambda, &u).norm() / (s.normal_matrix() * &u).norm().max(1e-300);
            assert!(res <= 1e-10);
        }
    }

    #[test]
    fn spectral_matches_dense() {
        for seed in 0..5 {
            let (a, gamma, c0, y) = instance(seed + 10);
            let dense = DenseTikhonov::new(a.clone(), &gamma, c0.clone().try_inverse().unwrap()).unwrap();
            let spec = SpectralTikhonov::new(&a, &gamma, &c0).unwrap();
            for lambda in [1e-3, 0.3, 5.0] {
                let rd = dense.solve(&y, lambda, None).unwrap();
                let rs = spec.solve(&y, lambda, None).unwrap();
                assert!((&rd.minimizer - &rs.minimizer).norm() <= 1e-9 * rd.minimizer.norm().max(1.0));
                assert!((rd.objective - rs.objective).abs() <= 1e-9 * rd.objective.abs().max(1.0));
                let dd = dense.dlambda(&y, lambda, &rd).unwrap();
                let ds = spec.dlambda(&y, lambda, &rs).unwrap();
                assert!((&dd - &ds).norm() <= 1e-9 * dd.norm().max(1.0));
            }
        }
    }

    #[test]
    fn exact_derivative_matches_central_difference() {
        for seed in 0..5 {
            let (a, gamma, c0, y) = instance(seed + 20);
            let s = DenseTikhonov::new(a, &gamma, c0.try_inverse().unwrap()).unwrap();
            let lambda = 0.8;
            let r = s.solve(&y, lambda, None).unwrap();
            let exact = s.dlambda(&y, lambda, &r).unwrap();
            let cd = dlambda_u_central(&s, &y, lambda, 1e-5, None).unwrap();
            assert!(!cd.flagged);
            assert!((&cd.value - &exact).norm() <= 1e-6 * exact.norm());
        }
    }

    #[test]
    fn central_difference_is_second_order() {
        let (a, gamma, c0, y) = instance(33);
        let s = DenseTikhonov::new(a, &gamma, c0.try_inverse().unwrap()).unwrap();
        let lambda = 0.5;
        let r = s.solve(&y, lambda, None).unwrap();
        let exact = s.dlambda(&y, lambda, &r).unwrap();
        let err = |h: f64| (dlambda_u_central(&s, &y, lambda, h, None).unwrap().value - &exact).norm();
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        assert!((3.5..=4.5).contains(&(e1 / e2)), "ratio {}", e1 / e2);
        // K = err/h² is stable across a third step
        let (k1, k3) = (e1 / 1e-4, e3 / 6.25e-6);
        assert!((k1 / k3 - 1.0).abs() < 0.05);
    }

    #[test]
    fn scalar_central_difference_accuracy() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let s = DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap();
        let y = DVector::from_element(1, 2.0);
        let cd = dlambda_u_central(&s, &y, 1.0, 1e-3, None).unwrap();
        assert!((cd.value[0] + 0.5).abs() <= 1e-5);
        assert!(dlambda_u_central(&s, &y, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn zero_operator_gives_zero_difference() {
        let a = DMatrix::zeros(2, 2);
        let s = DenseTikhonov::new(a, &DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_vec(vec![1.0, -3.0]);
        let cd = dlambda_u_central(&s, &y, 1.0, 0.1, None).unwrap();
        assert_eq!(cd.value.amax(), 0.0);
    }

    #[test]
    fn precision_norm_is_nonincreasing_in_lambda() {
        let (a, gamma, c0, y) = instance(44);
        let p = c0.try_inverse().unwrap();
        let s = DenseTikhonov::new(a, &gamma, p.clone()).unwrap();
        let norms: Vec<f64> = (0..30)
            .map(|i| {
                let u = s.solve_u(&y, 10f64.powf(-3.0 + i as f64 * 0.2)).unwrap();
                (u.transpose() * &p * &u)[0]
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn rejects_nonpositive_lambda_and_indefinite_input() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let s = DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap();
        assert!(s.solve(&DVector::zeros(1), 0.0, None).is_err());
        assert!(DenseTikhonov::new(one.clone(), &(-&one), one).is_err());
    }
}
