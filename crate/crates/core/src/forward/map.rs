use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::eikonal::{fast_marching_with, Grid};
use super::elliptic::{darcy_forward, full_grid_field, guarded_exp};
use super::observation::ObservationOperator;
use crate::error::{Error, Result};
use crate::field_prior::{KlPrior, Mesh};

/// A map `G` from unknowns (nodal values or KL coefficients) to observations.
pub trait ForwardMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// The matrix of a linear map, if any.
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl ForwardMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x)
    }
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.a)
    }
}

/// `ξ ↦ O(p)` where `p` solves the Darcy problem with `log k = u^ξ`.
#[derive(Debug, Clone)]
pub struct DarcyMap {
    pub pressure_mesh: Mesh,
    pub prior: Arc<KlPrior>,
    pub source: DVector<f64>,
    pub observation: ObservationOperator,
}

impl DarcyMap {
    pub fn new(
        pressure_mesh: Mesh,
        prior: Arc<KlPrior>,
        source: f64,
        observation: ObservationOperator,
    ) -> Result<Self> {
        let prior_mesh = prior.covariance().mesh();
        if prior_mesh.nodes() != pressure_mesh.nodes()
            || prior_mesh.dimension() != pressure_mesh.dimension()
        {
            return Err(Error::InvalidMesh("prior and pressure grids differ".into()));
        }
        if observation.state_len() != pressure_mesh.dofs() {
            return Err(Error::InvalidParameter("observation must act on pressure unknowns".into()));
        }
        let source = DVector::from_element(pressure_mesh.dofs(), source);
        Ok(DarcyMap {
            pressure_mesh,
            prior,
            source,
            observation,
        })
    }

    pub fn pressure(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.prior.field(xi);
        let full = full_grid_field(self.prior.covariance().mesh(), &u);
        darcy_forward(&self.pressure_mesh, &full, &self.source)
    }
}

impl ForwardMap for DarcyMap {
    fn input_dim(&self) -> usize {
        self.prior.truncation()
    }
    fn output_dim(&self) -> usize {
        self.observation.len()
    }
    fn apply(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.observation.apply(&self.pressure(xi)?))
    }
}

/// `ξ ↦ O(T)` where `T` is the fast-marching travel time for `s = exp(u^ξ)`.
#[derive(Debug, Clone)]
pub struct EikonalMap {
    pub grid: Grid,
    pub prior: Arc<KlPrior>,
    pub source: usize,
    pub init_radius: f64,
    pub observation: ObservationOperator,
}

impl EikonalMap {
    pub fn new(
        prior: Arc<KlPrior>,
        source: usize,
        init_radius: f64,
        observation: ObservationOperator,
    ) -> Result<Self> {
        let mesh = prior.covariance().mesh();
        let grid = Grid {
            dim: mesh.dimension(),
            nodes: mesh.nodes(),
        };
        if source >= grid.len() || observation.state_len() != grid.len() {
            return Err(Error::InvalidParameter(
                "eikonal source and observations must index the full grid".into(),
            ));
        }
        Ok(EikonalMap {
            grid,
            prior,
            source,
            init_radius,
            observation,
        })
    }

    pub fn travel_time(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.prior.field(xi);
        let full = full_grid_field(self.prior.covariance().mesh(), &u);
        let s = guarded_exp(full.as_slice())?;
        Ok(fast_marching_with(self.grid, &s, self.source, self.init_radius)?.times)
    }
}

impl ForwardMap for EikonalMap {
    fn input_dim(&self) -> usize {
        self.prior.truncation()
    }
    fn output_dim(&self) -> usize {
        self.observation.len()
    }
    fn apply(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.observation.apply(&self.travel_time(xi)?))
    }
}
