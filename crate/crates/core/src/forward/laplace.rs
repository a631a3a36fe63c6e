use nalgebra::{DMatrix, DVector};

use super::elliptic::laplace_factor;
use super::observation::ObservationOperator;
use crate::error::{Error, Result};
use crate::field_prior::Mesh;

/// `A = O ∘ (−Δ_h)⁻¹`, assembled row by row.
///
/// Row `k` is `(−Δ_h)⁻¹ e_{x_k}` because `−Δ_h` is symmetric.
pub fn build_linear_a(mesh: &Mesh, observation: &ObservationOperator) -> Result<DMatrix<f64>> {
    if observation.state_len() != mesh.dofs() {
        return Err(Error::InvalidParameter(format!(
            "observation acts on {} entries, mesh has {} unknowns",
            observation.state_len(),
            mesh.dofs()
        )));
    }
    let ch = laplace_factor(mesh)?;
    let d = mesh.dofs();
    let mut a = DMatrix::zeros(observation.len(), d);
    for (r, &i) in observation.indices().iter().enumerate() {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        a.set_row(r, &ch.solve(&e).transpose());
    }
    Ok(a)
}
