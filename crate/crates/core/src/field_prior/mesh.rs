use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

/// Uniform grid on the unit interval or square.
///
/// `nodes` counts grid points per axis including both endpoints, so the
/// spacing is `1 / (nodes - 1)`. Dirichlet meshes carry unknowns on interior
/// nodes only, Neumann meshes on every node. Unknowns are numbered with the
/// x index running fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mesh {
    dimension: usize,
    nodes: usize,
    boundary: Boundary,
}

impl Mesh {
    pub fn new(dimension: usize, nodes: usize, boundary: Boundary) -> Result<Self> {
        if dimension != 1 && dimension != 2 {
            return Err(Error::InvalidMesh(format!(
                "dimension must be 1 or 2, got {dimension}"
            )));
        }
        if nodes < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 nodes per axis, got {nodes}"
            )));
        }
        let mesh = Mesh {
            dimension,
            nodes,
            boundary,
        };
        if mesh.axis_unknowns() == 0 {
            return Err(Error::InvalidMesh(
                "Dirichlet mesh has no interior nodes".into(),
            ));
        }
        Ok(mesh)
    }

    /// Mesh with spacing `h = 2^-k`.
    pub fn with_spacing_exponent(dimension: usize, k: u32, boundary: Boundary) -> Result<Self> {
        Mesh::new(dimension, (1usize << k) + 1, boundary)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes - 1) as f64
    }

    /// Weight of the mesh inner product, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn axis_unknowns(&self) -> usize {
        match self.boundary {
            Boundary::Dirichlet => self.nodes.saturating_sub(2),
            Boundary::Neumann => self.nodes,
        }
    }

    /// Number of unknowns `d`.
    pub fn dofs(&self) -> usize {
        self.axis_unknowns().pow(self.dimension as u32)
    }

    /// Grid index (0..nodes) of the first unknown along an axis.
    fn axis_offset(&self) -> usize {
        match self.boundary {
            Boundary::Dirichlet => 1,
            Boundary::Neumann => 0,
        }
    }

    /// Coordinates of unknowns along one axis, strictly increasing.
    pub fn axis_coordinates(&self) -> Vec<f64> {
        let h = self.spacing();
        let off = self.axis_offset();
        (0..self.axis_unknowns()).map(|i| (i + off) as f64 * h).collect()
    }

    /// Full-grid multi-index of unknown `idx`.
    pub fn grid_position(&self, idx: usize) -> [usize; 2] {
        let n = self.axis_unknowns();
        let off = self.axis_offset();
        if self.dimension == 1 {
            [idx + off, 0]
        } else {
            [idx % n + off, idx / n + off]
        }
    }

    pub fn coordinates(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        let g = self.grid_position(idx);
        g[..self.dimension].iter().map(|&i| i as f64 * h).collect()
    }

    /// Unknown closest to `point`, or an error if the point is outside the
    /// domain or its closest grid node is not an unknown.
    pub fn nearest_unknown(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dimension {
            return Err(Error::InvalidParameter(format!(
                "point has {} coordinates, mesh is {}-dimensional",
                point.len(),
                self.dimension
            )));
        }
        let n = self.axis_unknowns();
        let off = self.axis_offset();
        let mut idx = 0;
        let mut stride = 1;
        for &x in point {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidParameter(format!("point {x} outside [0,1]")));
            }
            let g = (x / self.spacing()).round() as usize;
            if g < off || g - off >= n {
                return Err(Error::InvalidParameter(format!(
                    "point {x} maps to a boundary node"
                )));
            }
            idx += (g - off) * stride;
            stride *= n;
        }
        Ok(idx)
    }
}

/// One-dimensional negative second-difference matrix on `n` unknowns.
///
/// Neumann rows use the symmetric finite-volume closure `(u0 - u1)/h²`.
pub fn axis_laplacian(n: usize, h: f64, boundary: Boundary) -> DMatrix<f64> {
    let s = 1.0 / (h * h);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 * s;
        if i + 1 < n {
            m[(i, i + 1)] = -s;
            m[(i + 1, i)] = -s;
        }
    }
    if boundary == Boundary::Neumann {
        m[(0, 0)] = s;
        m[(n - 1, n - 1)] = s;
    }
    m
}

/// Negative discrete Laplacian `-Δ_h` on the mesh unknowns.
///
/// SPD for Dirichlet meshes; for Neumann meshes it is positive semidefinite
/// with the constant vector as null space.
pub fn assemble_laplacian(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.axis_unknowns();
    let l1 = axis_laplacian(n, mesh.spacing(), mesh.boundary());
    if mesh.dimension() == 1 {
        return l1;
    }
    let id = DMatrix::<f64>::identity(n, n);
    id.kronecker(&l1) + l1.kronecker(&id)
}
