use serde::{Deserialize, Serialize};

use super::interval::LambdaInterval;
use super::loss::{empirical_loss, TrainingSet, UpperLoss};
use crate::error::{Error, Result};
use crate::lower::LowerSolver;

pub const GRID_POINTS: usize = 64;
pub const GOLDEN_WIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineEstimate {
    pub lambda: f64,
    pub loss: f64,
    /// The minimizer sits on an endpoint of the interval.
    pub boundary: bool,
    pub evaluations: usize,
}

/// Minimizes a scalar objective on the interval: the best of a 64-point
/// log grid brackets the search, then golden-section refines to width
/// `1e-8`. The objective may be non-convex, so no derivative is used.
pub fn minimize_on_interval(
    interval: LambdaInterval,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<OfflineEstimate> {
    interval.validate()?;
    let grid = interval.log_grid(GRID_POINTS);
    let mut values = Vec::with_capacity(GRID_POINTS);
    for &l in &grid {
        let v = f(l)?;
        if v.is_nan() {
            return Err(Error::NonFinite { node: values.len() });
        }
        values.push(v);
    }
    let mut evaluations = GRID_POINTS;
    let best = (0..GRID_POINTS)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(GRID_POINTS - 1)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    evaluations += 2;
    while hi - lo > GOLDEN_WIDTH {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
        evaluations += 1;
    }
    let (mut lambda, mut loss) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    // Golden-section never samples the bracket ends, so compare against the
    // grid value at the best node.
    if values[best] <= loss {
        lambda = grid[best];
        loss = values[best];
    }
    let boundary = if best == 0 && lambda - interval.lower <= GOLDEN_WIDTH {
        lambda = interval.lower;
        loss = values[0];
        true
    } else if best == GRID_POINTS - 1 && interval.upper - lambda <= GOLDEN_WIDTH {
        lambda = interval.upper;
        loss = values[GRID_POINTS - 1];
        true
    } else {
        false
    };
    Ok(OfflineEstimate {
        lambda,
        loss,
        boundary,
        evaluations,
    })
}

/// `λ̂_n = argmin_{λ∈Λ} F̂_n(λ)` evaluated through the lower solver.
pub fn offline_minimize(
    set: &TrainingSet,
    interval: LambdaInterval,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
) -> Result<OfflineEstimate> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    minimize_on_interval(interval, |l| empirical_loss(set, l, solver, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::loss::TrainingPair;
    use crate::lower::{DenseTikhonov, SpectralTikhonov};
    use crate::rng::stream;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalar_population(lambda: f64) -> f64 {
        (1.0 + lambda * lambda) / (1.0 + lambda).powi(2)
    }

    #[test]
    fn recovers_scalar_population_minimizer() {
        let iv = LambdaInterval::new(0.01, 10.0).unwrap();
        let est = minimize_on_interval(iv, |l| Ok(scalar_population(l))).unwrap();
        assert!((est.lambda - 1.0).abs() <= 1e-6, "{}", est.lambda);
        assert!(!est.boundary);
    }

    #[test]
    fn flags_boundary_minimizers() {
        let iv = LambdaInterval::new(2.0, 10.0).unwrap();
        let est = minimize_on_interval(iv, |l| Ok(scalar_population(l))).unwrap();
        assert!(est.boundary);
        assert_eq!(est.lambda, 2.0);
        let iv = LambdaInterval::new(0.01, 0.5).unwrap();
        let est = minimize_on_interval(iv, |l| Ok(scalar_population(l))).unwrap();
        assert!(est.boundary);
        assert_eq!(est.lambda, 0.5);
    }

    #[test]
    fn finds_the_global_grid_basin() {
        // Two wells; the deeper one is near 3.
        let iv = LambdaInterval::new(0.01, 10.0).unwrap();
        let f = |l: f64| Ok(-(-(l - 0.1f64).powi(2) / 1e-3).exp() - 2.0 * (-(l - 3.0f64).powi(2) / 0.1).exp());
        let est = minimize_on_interval(iv, f).unwrap();
        assert!((est.lambda - 3.0).abs() < 1e-4);
    }

    fn dataset(a: &DMatrix<f64>, c0_sqrt: &DMatrix<f64>, n: usize, seed: u64) -> TrainingSet {
        let mut rng = stream(seed, &[]);
        let (k, d) = a.shape();
        TrainingSet::new(
            (0..n)
                .map(|_| {
                    let u = c0_sqrt * DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)) / 2f64.sqrt();
                    let y = a * &u + DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
                    TrainingPair { y, u }
                })
                .collect(),
        )
    }

    #[test]
    fn duplication_leaves_estimate_unchanged() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let solver = DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap();
        let set = dataset(&one, &one, 25, 3);
        let iv = LambdaInterval::default();
        let a = offline_minimize(&set, iv, &solver, UpperLoss::default()).unwrap();
        let b = offline_minimize(&set.duplicated(), iv, &solver, UpperLoss::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_change_of_variables_leaves_estimate_unchanged() {
        let mut rng = stream(21, &[]);
        let (k, d) = (4, 4);
        let a = DMatrix::from_fn(k, d, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let c0 = &b * b.transpose() + DMatrix::identity(d, d) * 0.2;
        let c0_sqrt = c0.clone().cholesky().unwrap().l();
        let gamma = DMatrix::identity(k, k) * 0.09;
        let set = dataset(&a, &c0_sqrt, 40, 5);

        // Signed permutations are orthogonal and exact in floating point.
        let mut qu = DMatrix::zeros(d, d);
        for (i, (j, s)) in [(2, 1.0), (0, -1.0), (3, 1.0), (1, -1.0)].into_iter().enumerate() {
            qu[(i, j)] = s;
        }
        let mut qy = DMatrix::zeros(k, k);
        for (i, (j, s)) in [(1, -1.0), (3, 1.0), (0, 1.0), (2, -1.0)].into_iter().enumerate() {
            qy[(i, j)] = s;
        }
        let rotated = TrainingSet::new(
            set.pairs
                .iter()
                .map(|p| TrainingPair {
                    y: &qy * &p.y,
                    u: &qu * &p.u,
                })
                .collect(),
        );
        let s1 = SpectralTikhonov::new(&a, &gamma, &c0).unwrap();
        let s2 = SpectralTikhonov::new(
            &(&qy * &a * qu.transpose()),
            &(&qy * &gamma * qy.transpose()),
            &(&qu * &c0 * qu.transpose()),
        )
        .unwrap();
        let iv = LambdaInterval::default();
        let e1 = offline_minimize(&set, iv, &s1, UpperLoss::default()).unwrap();
        let e2 = offline_minimize(&rotated, iv, &s2, UpperLoss::default()).unwrap();
        assert!((e1.lambda - e2.lambda).abs() <= 1e-6 * e1.lambda, "{} vs {}", e1.lambda, e2.lambda);
    }
}
