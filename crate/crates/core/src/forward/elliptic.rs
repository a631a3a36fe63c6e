//! Five-point finite-difference solvers for `−∇·(k∇p) = f` with `p = 0` on
//! the boundary. Constant `k = 1` gives the Laplace solver.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::field_prior::{Boundary, Mesh};
use crate::linalg::{BandedCholesky, BandedSpd};

/// Largest admissible `|u|` before `exp(u)` is clamped.
pub const EXP_CLAMP: f64 = 40.0;

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of nodal values clamped at `±EXP_CLAMP` since process start.
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// `exp(u)` with the overflow guard; non-finite `u` is an error.
pub fn guarded_exp(u: &[f64]) -> Result<Vec<f64>> {
    let mut clamped = 0;
    let out = u
        .iter()
        .enumerate()
        .map(|(node, &v)| {
            if !v.is_finite() {
                return Err(Error::NonFinite { node });
            }
            if v.abs() > EXP_CLAMP {
                clamped += 1;
            }
            Ok(v.clamp(-EXP_CLAMP, EXP_CLAMP).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    if clamped > 0 {
        CLAMP_EVENTS.fetch_add(clamped, Ordering::Relaxed);
        log::warn!("clamped {clamped} log-coefficients at |u| = {EXP_CLAMP}");
    }
    Ok(out)
}

/// Extends a field on the unknowns of `mesh` to every grid node, with zeros
/// on Dirichlet boundary nodes.
pub fn full_grid_field(mesh: &Mesh, u: &DVector<f64>) -> DVector<f64> {
    assert_eq!(u.len(), mesh.dofs());
    if mesh.boundary() == Boundary::Neumann {
        return u.clone();
    }
    let n = mesh.nodes();
    let total = n.pow(mesh.dimension() as u32);
    let mut full = DVector::zeros(total);
    for i in 0..u.len() {
        let g = mesh.grid_position(i);
        full[g[0] + n * g[1]] = u[i];
    }
    full
}

fn check_pressure_mesh(mesh: &Mesh) -> Result<()> {
    if mesh.boundary() != Boundary::Dirichlet {
        return Err(Error::InvalidMesh("pressure mesh must be Dirichlet".into()));
    }
    Ok(())
}

/// Assembles the SPD matrix of `−∇·(k∇·)` on the interior nodes of `mesh`.
///
/// `k` holds coefficients on the full grid; face values are harmonic means
/// of the two adjacent nodes.
pub fn assemble_diffusion(mesh: &Mesh, k: &[f64]) -> Result<BandedSpd> {
    check_pressure_mesh(mesh)?;
    let nodes = mesh.nodes();
    let dim = mesh.dimension();
    assert_eq!(k.len(), nodes.pow(dim as u32), "coefficient must live on the full grid");
    let n = mesh.axis_unknowns();
    let s = 1.0 / (mesh.spacing() * mesh.spacing());
    let bandwidth = if dim == 1 { 1 } else { n };
    let mut m = BandedSpd::zeros(mesh.dofs(), bandwidth);
    let face = |a: f64, b: f64| 2.0 * a * b / (a + b);
    for idx in 0..mesh.dofs() {
        let g = mesh.grid_position(idx);
        let here = k[g[0] + nodes * g[1]];
        for axis in 0..dim {
            for dir in [-1i64, 1] {
                let mut ng = g;
                ng[axis] = (ng[axis] as i64 + dir) as usize;
                let kf = face(here, k[ng[0] + nodes * ng[1]]) * s;
                m.add(idx, idx, kf);
                let interior = ng[axis] >= 1 && ng[axis] <= n;
                if interior && dir == 1 {
                    let stride = if axis == 0 { 1 } else { n };
                    m.add(idx, idx + stride, -kf);
                }
            }
        }
    }
    Ok(m)
}

fn factor(m: BandedSpd) -> Result<BandedCholesky> {
    m.cholesky()
}

/// Solves `−Δ_h p = u` on a Dirichlet mesh.
pub fn laplace_forward(mesh: &Mesh, u: &DVector<f64>) -> Result<DVector<f64>> {
    let ones = vec![1.0; mesh.nodes().pow(mesh.dimension() as u32)];
    let ch = factor(assemble_diffusion(mesh, &ones)?)?;
    Ok(ch.solve(u))
}

/// Factorised `−Δ_h` for repeated solves.
pub fn laplace_factor(mesh: &Mesh) -> Result<BandedCholesky> {
    let ones = vec![1.0; mesh.nodes().pow(mesh.dimension() as u32)];
    factor(assemble_diffusion(mesh, &ones)?)
}

/// Solves `−∇·(exp(u)∇p) = f` with `p = 0` on the boundary.
///
/// `log_permeability` lives on the full grid (see [`full_grid_field`]);
/// `source` on the interior nodes.
pub fn darcy_forward(
    mesh: &Mesh,
    log_permeability: &DVector<f64>,
    source: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = guarded_exp(log_permeability.as_slice())?;
    let ch = factor(assemble_diffusion(mesh, &k)?)?;
    Ok(ch.solve(source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_prior::{assemble_laplacian, build_covariance, CovarianceParams};
    use std::f64::consts::PI;

    #[test]
    fn unit_coefficient_matches_laplacian() {
        for dim in [1, 2] {
            let mesh = Mesh::new(dim, 7, Boundary::Dirichlet).unwrap();
            let ones = vec![1.0; 7usize.pow(dim as u32)];
            let a = assemble_diffusion(&mesh, &ones).unwrap().to_dense();
            assert!((a - assemble_laplacian(&mesh)).amax() < 1e-9);
        }
    }

    #[test]
    fn eigenfunction_identity() {
        let mesh = Mesh::new(2, 12, Boundary::Dirichlet).unwrap();
        let cov = build_covariance(&mesh, CovarianceParams { beta: 1.0, tau: 0.0, alpha: 1.0 })
            .unwrap();
        let phi = cov.eigenvectors().column(0).into_owned();
        let mu = cov.laplacian_eigenvalues()[0];
        let p = laplace_forward(&mesh, &phi).unwrap();
        assert!((p - &phi / mu).amax() <= 1e-10 * phi.amax());
        let zero = laplace_forward(&mesh, &DVector::zeros(mesh.dofs())).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn quadratic_is_exact_in_1d() {
        let mesh = Mesh::new(1, 17, Boundary::Dirichlet).unwrap();
        let p = laplace_forward(&mesh, &DVector::from_element(mesh.dofs(), 1.0)).unwrap();
        for (i, x) in mesh.axis_coordinates().iter().enumerate() {
            assert!((p[i] - x * (1.0 - x) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn darcy_with_zero_field_is_poisson() {
        let mesh = Mesh::new(2, 10, Boundary::Dirichlet).unwrap();
        let f = DVector::from_element(mesh.dofs(), 1.0);
        let p = darcy_forward(&mesh, &DVector::zeros(100), &f).unwrap();
        let q = laplace_forward(&mesh, &f).unwrap();
        assert!((p - q).amax() < 1e-14);
    }

    #[test]
    fn darcy_is_linear_in_source_and_positive() {
        let mesh = Mesh::new(2, 9, Boundary::Dirichlet).unwrap();
        let logk = DVector::from_fn(81, |i, _| (i as f64 * 0.37).sin());
        let f = DVector::from_element(mesh.dofs(), 1.0);
        let p1 = darcy_forward(&mesh, &logk, &f).unwrap();
        let p2 = darcy_forward(&mesh, &logk, &(&f * 2.0)).unwrap();
        assert!((&p2 - &p1 * 2.0).amax() <= 1e-14 * p2.amax());
        assert!(p1.iter().all(|&v| v > 0.0));
    }

    fn manufactured_error(nodes: usize) -> f64 {
        let mesh = Mesh::new(2, nodes, Boundary::Dirichlet).unwrap();
        let h = mesh.spacing();
        let logk = DVector::from_fn(nodes * nodes, |i, _| {
            let (ix, iy) = (i % nodes, i / nodes);
            (ix as f64 + iy as f64) * h
        });
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let f = DVector::from_fn(mesh.dofs(), |i, _| {
            let c = mesh.coordinates(i);
            let (x, y) = (c[0], c[1]);
            let a = (x + y).exp();
            let px = PI * (PI * x).cos() * (PI * y).sin();
            let py = PI * (PI * x).sin() * (PI * y).cos();
            -a * (px + py) + 2.0 * PI * PI * a * exact(x, y)
        });
        let p = darcy_forward(&mesh, &logk, &f).unwrap();
        (0..mesh.dofs())
            .map(|i| {
                let c = mesh.coordinates(i);
                (p[i] - exact(c[0], c[1])).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn darcy_manufactured_second_order() {
        let e = [manufactured_error(17), manufactured_error(33), manufactured_error(65)];
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} errors {e:?}");
        }
    }

    #[test]
    fn overflow_guard() {
        let before = clamp_events();
        let k = guarded_exp(&[0.0, 100.0, -100.0]).unwrap();
        assert_eq!(k[1], EXP_CLAMP.exp());
        assert!(clamp_events() >= before + 2);
        assert!(matches!(guarded_exp(&[0.0, f64::NAN]), Err(Error::NonFinite { node: 1 })));
    }

    #[test]
    fn rejects_neumann_pressure_mesh() {
        let mesh = Mesh::new(1, 5, Boundary::Neumann).unwrap();
        assert!(laplace_forward(&mesh, &DVector::zeros(5)).is_err());
    }
}
