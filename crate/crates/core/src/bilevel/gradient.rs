use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::loss::{TrainingPair, UpperLoss};
use crate::error::{Error, Result};
use crate::lower::{dlambda_u_central, LowerSolveReport, LowerSolver};

/// How the stochastic gradient `∂_λ f(λ, z)` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientKind {
    /// `2w(u_λ − u)ᵀ ∂_λu_λ` with the solver's derivative.
    #[default]
    Exact,
    /// Same, with `∂_λu_λ` replaced by a central difference of the lower
    /// solution.
    Approx,
    /// Central difference of the pair loss itself.
    LossDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: f64,
    /// Difference step actually used; `None` for the exact gradient.
    pub h: Option<f64>,
    /// Set when `h` had to shrink or a perturbed solve did not converge.
    pub flagged: bool,
    /// Lower solve at `λ`, used to warm-start the next step.
    pub report: LowerSolveReport,
}

pub fn sgd_gradient_exact(
    pair: &TrainingPair,
    lambda: f64,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
    warm: Option<&DVector<f64>>,
) -> Result<GradientSample> {
    let report = solver.solve(&pair.y, lambda, warm)?;
    let du = solver.dlambda(&pair.y, lambda, &report)?;
    Ok(GradientSample {
        value: loss.gradient(&report.minimizer, &pair.u).dot(&du),
        h: None,
        flagged: !report.converged,
        report,
    })
}

/// Shrinks `h` to `λ/2` when `λ − h` would leave the positive axis.
fn admissible_step(lambda: f64, h: f64) -> Result<(f64, bool)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("difference step must be > 0, got {h}")));
    }
    if lambda - h > 0.0 {
        Ok((h, false))
    } else {
        Ok((0.5 * lambda, true))
    }
}

pub fn sgd_gradient_approx(
    pair: &TrainingPair,
    lambda: f64,
    h: f64,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
    warm: Option<&DVector<f64>>,
) -> Result<GradientSample> {
    let (h, shrunk) = admissible_step(lambda, h)?;
    let report = solver.solve(&pair.y, lambda, warm)?;
    let cd = dlambda_u_central(solver, &pair.y, lambda, h, Some(&report.minimizer))?;
    Ok(GradientSample {
        value: loss.gradient(&report.minimizer, &pair.u).dot(&cd.value),
        h: Some(h),
        flagged: shrunk || cd.flagged || !report.converged,
        report,
    })
}

/// `(f(λ+h, z) − f(λ−h, z)) / 2h` with `f(λ, z) = w‖u_λ(y) − u‖²`.
pub fn sgd_gradient_loss_difference(
    pair: &TrainingPair,
    lambda: f64,
    h: f64,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
    warm: Option<&DVector<f64>>,
) -> Result<GradientSample> {
    let (h, shrunk) = admissible_step(lambda, h)?;
    let report = solver.solve(&pair.y, lambda, warm)?;
    let plus = solver.solve(&pair.y, lambda + h, Some(&report.minimizer))?;
    let minus = solver.solve(&pair.y, lambda - h, Some(&report.minimizer))?;
    let value = (loss.value(&plus.minimizer, &pair.u) - loss.value(&minus.minimizer, &pair.u)) / (2.0 * h);
    Ok(GradientSample {
        value,
        h: Some(h),
        flagged: shrunk || !(plus.converged && minus.converged && report.converged),
        report,
    })
}

pub fn sgd_gradient(
    kind: GradientKind,
    pair: &TrainingPair,
    lambda: f64,
    h: f64,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
    warm: Option<&DVector<f64>>,
) -> Result<GradientSample> {
    match kind {
        GradientKind::Exact => sgd_gradient_exact(pair, lambda, solver, loss, warm),
        GradientKind::Approx => sgd_gradient_approx(pair, lambda, h, solver, loss, warm),
        GradientKind::LossDifference => sgd_gradient_loss_difference(pair, lambda, h, solver, loss, warm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::DenseTikhonov;
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalar() -> DenseTikhonov {
        let one = DMatrix::from_element(1, 1, 1.0);
        DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap()
    }

    fn pair(y: f64, u: f64) -> TrainingPair {
        TrainingPair {
            y: DVector::from_element(1, y),
            u: DVector::from_element(1, u),
        }
    }

    #[test]
    fn scalar_exact_gradient() {
        let g = sgd_gradient_exact(&pair(2.0, 0.0), 1.0, &scalar(), UpperLoss::default(), None).unwrap();
        assert!((g.value + 1.0).abs() < 1e-14);
        assert!(!g.flagged);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let s = scalar();
        let z = pair(2.0, s.solve_u(&DVector::from_element(1, 2.0), 1.0).unwrap()[0]);
        for kind in [GradientKind::Exact, GradientKind::Approx] {
            for h in [1e-1, 1e-3] {
                let g = sgd_gradient(kind, &z, 1.0, h, &s, UpperLoss::default(), None).unwrap();
                assert_eq!(g.value, 0.0);
            }
        }
    }

    #[test]
    fn step_shrinks_near_zero() {
        let g = sgd_gradient_approx(&pair(2.0, 0.0), 0.01, 0.05, &scalar(), UpperLoss::default(), None).unwrap();
        assert!(g.flagged);
        assert_eq!(g.h, Some(0.005));
        assert!(sgd_gradient_approx(&pair(2.0, 0.0), 0.01, 0.0, &scalar(), UpperLoss::default(), None).is_err());
    }

    fn linear_instance(seed: u64) -> (DenseTikhonov, Vec<TrainingPair>) {
        let mut rng = stream(seed, &[]);
        let (k, d) = (5, 3);
        let a = DMatrix::from_fn(k, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let prec = &b * b.transpose() + DMatrix::identity(d, d);
        let solver = DenseTikhonov::new(a, &(DMatrix::identity(k, k) * 0.2), prec).unwrap();
        let pairs = (0..50)
            .map(|_| TrainingPair {
                y: DVector::from_fn(k, |_, _| rng.sample(StandardNormal)),
                u: DVector::from_fn(d, |_, _| rng.sample(StandardNormal)),
            })
            .collect();
        (solver, pairs)
    }

    #[test]
    fn approximations_track_the_exact_gradient() {
        let (s, pairs) = linear_instance(9);
        let loss = UpperLoss::default();
        for p in &pairs[..10] {
            let exact = sgd_gradient_exact(p, 0.7, &s, loss, None).unwrap().value;
            for kind in [GradientKind::Approx, GradientKind::LossDifference] {
                let g = sgd_gradient(kind, p, 0.7, 1e-4, &s, loss, None).unwrap().value;
                assert!((g - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{kind:?}: {g} vs {exact}");
            }
        }
    }

    #[test]
    fn approximation_bias_is_second_order() {
        let (s, pairs) = linear_instance(10);
        let loss = UpperLoss::default();
        let lambda = 0.7;
        let exact: Vec<f64> = pairs
            .iter()
            .map(|p| sgd_gradient_exact(p, lambda, &s, loss, None).unwrap().value)
            .collect();
        let bias = |h: f64| {
            pairs
                .iter()
                .zip(&exact)
                .map(|(p, e)| sgd_gradient_approx(p, lambda, h, &s, loss, None).unwrap().value - e)
                .sum::<f64>()
                / pairs.len() as f64
        };
        let ratio = bias(1e-2) / bias(5e-3);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn scalar_gradient_is_unbiased() {
        // u ~ N(0, 1), y = u + N(0, 1); population ∂F(2) = 2/27.
        let s = scalar();
        let n: usize = 100_000;
        let mut rng = stream(12, &[]);
        let g: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                sgd_gradient_exact(&pair(u + e, u), 2.0, &s, UpperLoss::default(), None).unwrap().value
            })
            .collect();
        let mean = g.iter().sum::<f64>() / n as f64;
        let se = (g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
        assert!((mean - 2.0 / 27.0).abs() <= 3.0 * se, "{mean} (se {se})");
    }
}
