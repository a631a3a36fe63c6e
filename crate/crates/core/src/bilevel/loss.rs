use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::exact_sum;
use crate::lower::{LowerSolver, SpectralTikhonov};

/// Upper-level discrepancy `w‖a − b‖²`. The weight lets mesh-dependent
/// problems use the `L²` norm `h^dim ‖·‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpperLoss {
    pub weight: f64,
}

impl Default for UpperLoss {
    fn default() -> Self {
        UpperLoss { weight: 1.0 }
    }
}

impl UpperLoss {
    pub fn value(&self, estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
        self.weight * (estimate - truth).norm_squared()
    }

    /// Gradient in the first argument, `2w(a − b)`.
    pub fn gradient(&self, estimate: &DVector<f64>, truth: &DVector<f64>) -> DVector<f64> {
        (estimate - truth) * (2.0 * self.weight)
    }
}

/// A training pair `(y, u)`; for KL-coefficient models `u` holds `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub y: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Self {
        TrainingSet { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn prefix(&self, n: usize) -> TrainingSet {
        TrainingSet::new(self.pairs[..n.min(self.len())].to_vec())
    }

    /// Every pair repeated twice, in place.
    pub fn duplicated(&self) -> TrainingSet {
        TrainingSet::new(self.pairs.iter().flat_map(|p| [p.clone(), p.clone()]).collect())
    }
}

/// `F̂_n(λ) = (1/n) Σ_j w‖u_λ(y_j) − u_j‖²`. Pairs are solved in parallel
/// and summed with correct rounding, so the result depends neither on
/// threading nor on the order of the pairs.
pub fn empirical_loss(set: &TrainingSet, lambda: f64, solver: &dyn LowerSolver, loss: UpperLoss) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let terms: Vec<Result<f64>> = set
        .pairs
        .par_iter()
        .map(|p| Ok(loss.value(&solver.solve_u(&p.y, lambda)?, &p.u)))
        .collect();
    let mut values = Vec::with_capacity(terms.len());
    for (j, t) in terms.into_iter().enumerate() {
        values.push(t.map_err(|e| Error::at_pair(j, e))?);
    }
    Ok(exact_sum(values) / set.len() as f64)
}

/// Sufficient statistics of `F̂_n` for a linear problem in spectral form.
///
/// With `u_λ(y) = E(a/(Λ+λ))`, `n F̂_n(λ)/w = qᵀ(G∘S)q − 2qᵀm + Σ‖u_j‖²`
/// where `q = 1/(Λ+λ)`, `G = EᵀE`, `S = Σ a_j a_jᵀ` and `m = Σ a_j ∘ Eᵀu_j`.
/// Each evaluation then costs `O(r²)` regardless of `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmpiricalLoss {
    spectrum: DVector<f64>,
    quadratic: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    n: usize,
    weight: f64,
}

impl LinearEmpiricalLoss {
    pub fn new(solver: &SpectralTikhonov, set: &TrainingSet, loss: UpperLoss) -> Result<Self> {
        Self::nested(solver, set, &[set.len()], loss).map(|mut v| v.remove(0))
    }

    /// Statistics for each prefix length in `ns` (increasing), sharing one
    /// pass over the data.
    pub fn nested(solver: &SpectralTikhonov, set: &TrainingSet, ns: &[usize], loss: UpperLoss) -> Result<Vec<Self>> {
        if ns.iter().any(|&n| n == 0 || n > set.len()) || ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(if set.is_empty() {
                Error::EmptyDataset
            } else {
                Error::InvalidParameter(format!("prefix sizes {ns:?} invalid for {} pairs", set.len()))
            });
        }
        let r = solver.rank();
        let proj = solver.data_projection();
        let et = solver.e_basis().transpose();
        let mut s = DMatrix::zeros(r, r);
        let mut m = DVector::zeros(r);
        let mut c = 0.0;
        let mut out = Vec::with_capacity(ns.len());
        let mut next = 0;
        for (j, p) in set.pairs.iter().enumerate() {
            let a = solver.features_from_projection(&(&proj * &p.y));
            s.ger(1.0, &a, &a, 1.0);
            m += a.component_mul(&(&et * &p.u));
            c += p.u.norm_squared();
            if j + 1 == ns[next] {
                out.push(LinearEmpiricalLoss {
                    spectrum: solver.spectrum().clone(),
                    quadratic: solver.gram().component_mul(&s),
                    linear: m.clone(),
                    constant: c,
                    n: j + 1,
                    weight: loss.weight,
                });
                next += 1;
                if next == ns.len() {
                    break;
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn value(&self, lambda: f64) -> f64 {
        let q = self.spectrum.map(|l| 1.0 / (l + lambda));
        let quad = q.dot(&(&self.quadratic * &q));
        self.weight * (quad - 2.0 * q.dot(&self.linear) + self.constant) / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::DenseTikhonov;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalar_set(n: usize, seed: u64) -> TrainingSet {
        let mut rng = stream(seed, &[]);
        TrainingSet::new(
            (0..n)
                .map(|_| {
                    let u: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    TrainingPair {
                        y: DVector::from_element(1, u + e),
                        u: DVector::from_element(1, u),
                    }
                })
                .collect(),
        )
    }

    fn scalar_solver() -> DenseTikhonov {
        let one = DMatrix::from_element(1, 1, 1.0);
        DenseTikhonov::new(one.clone(), &one, one.clone()).unwrap()
    }

    #[test]
    fn zero_pair_has_zero_loss() {
        let set = TrainingSet::new(vec![TrainingPair {
            y: DVector::zeros(1),
            u: DVector::zeros(1),
        }]);
        for lambda in [1e-3, 1.0, 10.0] {
            assert_eq!(empirical_loss(&set, lambda, &scalar_solver(), UpperLoss::default()).unwrap(), 0.0);
        }
    }

    #[test]
    fn empty_set_rejected() {
        let r = empirical_loss(&TrainingSet::default(), 1.0, &scalar_solver(), UpperLoss::default());
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn failing_solve_reports_pair_index() {
        let mut set = scalar_set(5, 1);
        set.pairs[3].y = DVector::zeros(2);
        let s = SpectralTikhonov::new(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        struct Picky(SpectralTikhonov);
        impl LowerSolver for Picky {
            fn dim(&self) -> usize {
                1
            }
            fn solve(&self, y: &DVector<f64>, l: f64, w: Option<&DVector<f64>>) -> Result<crate::lower::LowerSolveReport> {
                if y.len() != 1 {
                    return Err(Error::InvalidParameter("bad data length".into()));
                }
                self.0.solve(y, l, w)
            }
            fn dlambda(&self, y: &DVector<f64>, l: f64, r: &crate::lower::LowerSolveReport) -> Result<DVector<f64>> {
                self.0.dlambda(y, l, r)
            }
        }
        match empirical_loss(&set, 1.0, &Picky(s), UpperLoss::default()) {
            Err(Error::Pair { index, .. }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_loss_matches_population_formula() {
        // u ~ N(0, 1/λ*), y = u + N(0, 1) with λ* = 1.
        let n = 100_000;
        let set = scalar_set(n, 7);
        let solver = scalar_solver();
        for lambda in [0.3, 1.0, 3.0] {
            let terms: Vec<f64> = set
                .pairs
                .iter()
                .map(|p| (solver.solve_u(&p.y, lambda).unwrap() - &p.u).norm_squared())
                .collect();
            let mean = terms.iter().sum::<f64>() / n as f64;
            let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let f = (1.0 + lambda * lambda) / (1.0 + lambda).powi(2);
            let emp = empirical_loss(&set, lambda, &solver, UpperLoss::default()).unwrap();
            assert!((emp - mean).abs() <= 1e-12);
            assert!((emp - f).abs() <= 3.0 * se, "lambda {lambda}: {emp} vs {f} (se {se})");
        }
    }

    #[test]
    fn sufficient_statistics_match_direct_evaluation() {
        let mut rng = stream(11, &[]);
        let (k, d, n) = (4, 6, 30);
        let a = DMatrix::from_fn(k, d, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let c0 = &b * b.transpose() + DMatrix::identity(d, d) * 0.1;
        let gamma = DMatrix::identity(k, k) * 0.05;
        let spectral = SpectralTikhonov::new(&a, &gamma, &c0).unwrap();
        let set = TrainingSet::new(
            (0..n)
                .map(|_| TrainingPair {
                    y: DVector::from_fn(k, |_, _| rng.random::<f64>() - 0.5),
                    u: DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5),
                })
                .collect(),
        );
        let loss = UpperLoss { weight: 0.5 };
        let nested = LinearEmpiricalLoss::nested(&spectral, &set, &[5, 12, 30], loss).unwrap();
        for lambda in [1e-3, 0.1, 4.0] {
            for stats in &nested {
                let direct = empirical_loss(&set.prefix(stats.len()), lambda, &spectral, loss).unwrap();
                assert!((stats.value(lambda) - direct).abs() <= 1e-10 * direct.max(1.0));
            }
        }
        assert!(LinearEmpiricalLoss::nested(&spectral, &set, &[12, 5], loss).is_err());
        assert!(LinearEmpiricalLoss::nested(&spectral, &set, &[31], loss).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn duplicating_the_dataset_keeps_the_loss(seed in 0u64..1000, n in 1usize..40, lambda in 1e-3f64..10.0) {
            let set = scalar_set(n, seed);
            let solver = scalar_solver();
            let a = empirical_loss(&set, lambda, &solver, UpperLoss::default()).unwrap();
            let b = empirical_loss(&set.duplicated(), lambda, &solver, UpperLoss::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
