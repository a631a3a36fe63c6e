use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::preset::{Model, OperatorKind, Preset};
use crate::bilevel::{TrainingPair, TrainingSet, UpperLoss};
use crate::error::{Error, Result};
use crate::field_prior::{build_covariance, Boundary, CoefficientLaw, KlPrior, Mesh};
use crate::forward::{
    build_linear_a, signal_sample, DarcyMap, EikonalMap, ForwardMap, Grid, Noise, ObservationOperator,
    SecondDifference,
};
use crate::lower::{GaussNewton, LowerSolver, SignalTikhonov, SpectralTikhonov};
use crate::rng::{role, stream};

enum Sampler {
    /// `u = B z` with `z ~ N(0, I)`, `y = Au + γ e`.
    Gaussian { basis: DMatrix<f64>, a: DMatrix<f64>, noise: Noise },
    /// `ξ = z/√λ*`, `y = G(ξ) + γ e`.
    Coefficients { map: Arc<dyn ForwardMap>, scale: f64, noise: Noise },
    Signal { rate: f64, horizon: f64, grid: usize, noise: Noise },
}

/// A data-generating model together with its lower-level solver.
pub struct Problem {
    pub lambda_star: Option<f64>,
    pub loss: UpperLoss,
    solver: Option<Arc<dyn LowerSolver>>,
    spectral: Option<Arc<SpectralTikhonov>>,
    sampler: Sampler,
    /// Number of unknowns of the lower problem.
    pub dim: usize,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("lambda_star", &self.lambda_star)
            .field("dim", &self.dim)
            .finish()
    }
}

fn linear_problem(
    a: DMatrix<f64>,
    basis: DMatrix<f64>,
    lambda_star: f64,
    gamma: f64,
    weight: f64,
) -> Result<Problem> {
    let k = a.nrows();
    let dim = a.ncols();
    let noise = Noise::new(gamma)?;
    // C₀ = λ* B Bᵀ, the covariance the data were drawn from (up to 1/λ*).
    let spectral = if gamma > 0.0 {
        let c0 = &basis * basis.transpose() * lambda_star;
        Some(Arc::new(SpectralTikhonov::new(&a, &noise.covariance(k), &c0)?))
    } else {
        None
    };
    Ok(Problem {
        lambda_star: Some(lambda_star),
        loss: UpperLoss { weight },
        solver: spectral.clone().map(|s| s as Arc<dyn LowerSolver>),
        spectral,
        sampler: Sampler::Gaussian { basis, a, noise },
        dim,
    })
}

fn kl_prior(mesh: &Mesh, prior: crate::field_prior::CovarianceParams, truncation: usize, lambda_star: f64) -> Result<Arc<KlPrior>> {
    let cov = build_covariance(mesh, prior)?;
    Ok(Arc::new(KlPrior::new(Arc::new(cov), truncation, lambda_star, CoefficientLaw::Gaussian)?))
}

/// Laplace problem on a 1D mesh with observation points given by
/// coordinates, so several meshes can share them.
pub fn laplace_on_mesh(
    mesh: &Mesh,
    prior: crate::field_prior::CovarianceParams,
    truncation: Option<usize>,
    lambda_star: f64,
    points: &[Vec<f64>],
    gamma: f64,
) -> Result<Problem> {
    let kl = kl_prior(mesh, prior, truncation.unwrap_or(mesh.dofs()), lambda_star)?;
    let idx = points.iter().map(|p| mesh.nearest_unknown(p)).collect::<Result<Vec<_>>>()?;
    let obs = ObservationOperator::new(idx, mesh.dofs())?;
    let a = build_linear_a(mesh, &obs)?;
    linear_problem(a, kl.basis().clone(), lambda_star, gamma, mesh.cell_volume())
}

impl Problem {
    /// Builds the problem described by a preset. Not available for
    /// `laplace-dimension`, which has one problem per mesh
    /// (see [`Problem::dimension_family`]).
    pub fn from_preset(preset: &Preset) -> Result<Problem> {
        let mut obs_rng = stream(preset.seed, &[role::OBSERVATION_POINTS]);
        match &preset.model {
            Model::Linear { dim, observations, operator, gamma, lambda_star, c0_decay } => {
                let a = match operator {
                    OperatorKind::Identity => {
                        if observations != dim {
                            return Err(Error::Preset("identity operator needs observations == dim".into()));
                        }
                        DMatrix::identity(*dim, *dim)
                    }
                    OperatorKind::Gaussian => {
                        let s = 1.0 / (*dim as f64).sqrt();
                        DMatrix::from_fn(*observations, *dim, |_, _| s * obs_rng.sample::<f64, _>(StandardNormal))
                    }
                };
                let basis = DMatrix::from_diagonal(&DVector::from_fn(*dim, |i, _| {
                    ((i as f64 + 1.0).powf(-c0_decay) / lambda_star).sqrt()
                }));
                linear_problem(a, basis, *lambda_star, *gamma, 1.0)
            }
            Model::Laplace { dimension, nodes, prior, lambda_star, observations, gamma, truncation } => {
                let mesh = Mesh::new(*dimension, *nodes, Boundary::Dirichlet)?;
                let kl = kl_prior(&mesh, *prior, truncation.unwrap_or(mesh.dofs()), *lambda_star)?;
                let all: Vec<usize> = (0..mesh.dofs()).collect();
                let obs = ObservationOperator::random(&all, *observations, mesh.dofs(), &mut obs_rng)?;
                let a = build_linear_a(&mesh, &obs)?;
                linear_problem(a, kl.basis().clone(), *lambda_star, *gamma, mesh.cell_volume())
            }
            Model::LaplaceDimension { .. } => Err(Error::Preset(
                "laplace-dimension presets define one problem per mesh; use the dimension study".into(),
            )),
            Model::Darcy { nodes, truncation, prior, lambda_star, gamma, observations, source, gauss_newton } => {
                let kl = kl_prior(&Mesh::new(2, *nodes, Boundary::Neumann)?, *prior, *truncation, *lambda_star)?;
                let pmesh = Mesh::new(2, *nodes, Boundary::Dirichlet)?;
                let all: Vec<usize> = (0..pmesh.dofs()).collect();
                let obs = ObservationOperator::random(&all, *observations, pmesh.dofs(), &mut obs_rng)?;
                let map: Arc<dyn ForwardMap> = Arc::new(DarcyMap::new(pmesh, kl, *source, obs)?);
                Self::coefficient_problem(map, *truncation, *lambda_star, *gamma, *gauss_newton)
            }
            Model::Eikonal { nodes, truncation, prior, lambda_star, gamma, observations, init_radius, gauss_newton } => {
                let kl = kl_prior(&Mesh::new(2, *nodes, Boundary::Dirichlet)?, *prior, *truncation, *lambda_star)?;
                let grid = Grid { dim: 2, nodes: *nodes };
                let src = grid.center();
                let candidates: Vec<usize> = (0..grid.len()).filter(|&i| i != src).collect();
                let obs = ObservationOperator::random(&candidates, *observations, grid.len(), &mut obs_rng)?;
                let map: Arc<dyn ForwardMap> = Arc::new(EikonalMap::new(kl, src, *init_radius, obs)?);
                Self::coefficient_problem(map, *truncation, *lambda_star, *gamma, *gauss_newton)
            }
            Model::Signal { rate, horizon, grid, noise_std } => {
                let solver = Arc::new(SignalTikhonov::new(SecondDifference::new(*horizon, *grid)?, *noise_std)?);
                Ok(Problem {
                    lambda_star: None,
                    loss: UpperLoss::default(),
                    solver: Some(solver),
                    spectral: None,
                    sampler: Sampler::Signal {
                        rate: *rate,
                        horizon: *horizon,
                        grid: *grid,
                        noise: Noise::new(*noise_std)?,
                    },
                    dim: *grid,
                })
            }
        }
    }

    fn coefficient_problem(
        map: Arc<dyn ForwardMap>,
        truncation: usize,
        lambda_star: f64,
        gamma: f64,
        options: crate::lower::GaussNewtonOptions,
    ) -> Result<Problem> {
        let solver = Arc::new(GaussNewton::new(map.clone(), gamma, options)?);
        Ok(Problem {
            lambda_star: Some(lambda_star),
            loss: UpperLoss::default(),
            solver: Some(solver),
            spectral: None,
            sampler: Sampler::Coefficients {
                map,
                scale: 1.0 / lambda_star.sqrt(),
                noise: Noise::new(gamma)?,
            },
            dim: truncation,
        })
    }

    /// One problem per mesh of a `laplace-dimension` preset, observing the
    /// same points: `K` distinct interior nodes of the coarsest mesh.
    pub fn dimension_family(preset: &Preset) -> Result<Vec<(u32, Problem)>> {
        let Model::LaplaceDimension { mesh_exponents, prior, lambda_star, observations, gamma, truncation } =
            &preset.model
        else {
            return Err(Error::Preset("not a laplace-dimension preset".into()));
        };
        let coarse = Mesh::with_spacing_exponent(1, mesh_exponents[0], Boundary::Dirichlet)?;
        let all: Vec<usize> = (0..coarse.dofs()).collect();
        let mut rng = stream(preset.seed, &[role::OBSERVATION_POINTS]);
        let obs = ObservationOperator::random(&all, *observations, coarse.dofs(), &mut rng)?;
        let points: Vec<Vec<f64>> = obs.indices().iter().map(|&i| coarse.coordinates(i)).collect();
        mesh_exponents
            .iter()
            .map(|&k| {
                let mesh = Mesh::with_spacing_exponent(1, k, Boundary::Dirichlet)?;
                Ok((k, laplace_on_mesh(&mesh, *prior, *truncation, *lambda_star, &points, *gamma)?))
            })
            .collect()
    }

    pub fn solver(&self) -> Result<Arc<dyn LowerSolver>> {
        self.solver
            .clone()
            .ok_or_else(|| Error::InvalidParameter("noiseless model (gamma = 0) has no lower problem".into()))
    }

    /// Closed-form spectral solver, for linear models with noise.
    pub fn spectral(&self) -> Option<&Arc<SpectralTikhonov>> {
        self.spectral.as_ref()
    }

    /// Linear forward matrix, if the model is linear.
    pub fn forward_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.sampler {
            Sampler::Gaussian { a, .. } => Some(a),
            _ => None,
        }
    }

    /// Pair `j` drawn from its own stream `(seed, path, j)`, so datasets
    /// of different sizes share prefixes and generation can run in parallel.
    pub fn sample_pair(&self, seed: u64, path: &[u64], j: usize) -> Result<TrainingPair> {
        let mut p = path.to_vec();
        p.push(j as u64);
        let mut rng = stream(seed, &p);
        match &self.sampler {
            Sampler::Gaussian { basis, a, noise } => {
                let z = DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let u = basis * z;
                let y = noise.perturb(&(a * &u), &mut rng);
                Ok(TrainingPair { y, u })
            }
            Sampler::Coefficients { map, scale, noise } => {
                let xi = DVector::from_fn(map.input_dim(), |_, _| rng.sample::<f64, _>(StandardNormal)) * *scale;
                let clean = map.apply(&xi)?;
                let y = noise.perturb(&clean, &mut rng);
                Ok(TrainingPair { y, u: xi })
            }
            Sampler::Signal { rate, horizon, grid, noise } => {
                let path = signal_sample(*rate, *horizon, *grid, &mut rng)?;
                let y = noise.perturb(&path.values, &mut rng);
                Ok(TrainingPair { y, u: path.values })
            }
        }
    }

    /// `n` i.i.d. pairs; a failing forward solve aborts with its index.
    pub fn generate_dataset(&self, n: usize, seed: u64, path: &[u64]) -> Result<TrainingSet> {
        let pairs: Vec<Result<TrainingPair>> =
            (0..n).into_par_iter().map(|j| self.sample_pair(seed, path, j)).collect();
        let mut out = Vec::with_capacity(n);
        for (j, p) in pairs.into_iter().enumerate() {
            out.push(p.map_err(|e| Error::at_pair(j, e))?);
        }
        Ok(TrainingSet::new(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::empirical_loss;

    fn scalar(gamma: f64) -> Preset {
        let p = Preset::load("scalar-linear").unwrap();
        p.resolve(false, &[("model.gamma".into(), gamma.to_string())]).unwrap()
    }

    #[test]
    fn datasets_are_deterministic_and_nested() {
        let p = Preset::load("matrix-linear").unwrap();
        let prob = Problem::from_preset(&p).unwrap();
        let a = prob.generate_dataset(20, 7, &[1]).unwrap();
        let b = prob.generate_dataset(20, 7, &[1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(prob.generate_dataset(5, 7, &[1]).unwrap(), a.prefix(5));
        assert_ne!(prob.generate_dataset(5, 8, &[1]).unwrap(), a.prefix(5));
    }

    #[test]
    fn empty_dataset_rejected_by_loss() {
        let prob = Problem::from_preset(&scalar(1.0)).unwrap();
        let set = prob.generate_dataset(0, 1, &[]).unwrap();
        assert!(set.is_empty());
        assert!(matches!(
            empirical_loss(&set, 1.0, prob.solver().unwrap().as_ref(), prob.loss),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn noiseless_linear_data_is_exact() {
        for name in ["scalar-linear", "laplace2d"] {
            let p = Preset::load(name)
                .unwrap()
                .resolve(false, &[("model.gamma".into(), "0".into())])
                .unwrap();
            let prob = Problem::from_preset(&p).unwrap();
            let a = prob.forward_matrix().unwrap().clone();
            for pair in prob.generate_dataset(3, 2, &[]).unwrap().pairs {
                assert_eq!(pair.y, &a * &pair.u);
            }
            assert!(prob.solver().is_err());
        }
    }

    #[test]
    fn dimension_family_shares_points() {
        let p = Preset::load("laplace1d-dim").unwrap();
        let fam = Problem::dimension_family(&p).unwrap();
        assert_eq!(fam.len(), 4);
        // Identical coefficients across meshes: the KL draws share a stream.
        let pairs: Vec<_> = fam.iter().map(|(_, pr)| pr.sample_pair(1, &[2], 0).unwrap()).collect();
        let ys: Vec<_> = pairs.iter().map(|pr| pr.y.clone()).collect();
        for y in &ys[1..] {
            assert!((y - &ys[0]).amax() <= 0.05 * ys[0].amax(), "{y} vs {}", ys[0]);
        }
    }
}
