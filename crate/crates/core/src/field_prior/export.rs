//! Covariance export: a JSON header plus a CSV eigenpair payload.
//!
//! Floats are written in Rust's shortest round-trip form, so import
//! reproduces the model bit-for-bit.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::covariance::{sigma, CovarianceModel};
use super::mesh::Mesh;
use crate::error::{Error, Result};

const FORMAT: &str = "bilevel-covariance";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CovarianceHeader {
    pub format: String,
    pub version: u32,
    pub beta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub mesh: Mesh,
    pub eigenpairs: usize,
}

impl CovarianceModel {
    pub fn header(&self) -> CovarianceHeader {
        CovarianceHeader {
            format: FORMAT.into(),
            version: VERSION,
            beta: self.beta,
            tau: self.tau,
            alpha: self.alpha,
            mesh: self.mesh.clone(),
            eigenpairs: self.dofs(),
        }
    }

    /// Writes the header to `json` and one CSV row per eigenpair to `csv`
    /// (`index, mu, sigma, phi_0 .. phi_{d-1}`).
    pub fn export(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_string_pretty(&self.header())?)?;
        let mut w = csv::Writer::from_path(csv)?;
        let d = self.dofs();
        let mut head = vec!["index".to_string(), "mu".into(), "sigma".into()];
        head.extend((0..d).map(|i| format!("phi_{i}")));
        w.write_record(&head)?;
        for c in 0..d {
            let mut row = vec![
                c.to_string(),
                self.laplacian_eigenvalues[c].to_string(),
                self.eigenvalues[c].to_string(),
            ];
            row.extend(self.eigenvectors.column(c).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn import(json: &Path, csv: &Path) -> Result<CovarianceModel> {
        let header: CovarianceHeader = serde_json::from_str(&std::fs::read_to_string(json)?)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported covariance format {} v{}",
                header.format, header.version
            )));
        }
        let mesh = Mesh::new(header.mesh.dimension(), header.mesh.nodes(), header.mesh.boundary())?;
        let d = mesh.dofs();
        if header.eigenpairs != d {
            return Err(Error::InvalidParameter(format!(
                "header declares {} eigenpairs, mesh has {d} unknowns",
                header.eigenpairs
            )));
        }
        let params = super::covariance::CovarianceParams {
            beta: header.beta,
            tau: header.tau,
            alpha: header.alpha,
        };
        params.validate()?;
        let mut mu = DVector::zeros(d);
        let mut sig = DVector::zeros(d);
        let mut vecs = DMatrix::zeros(d, d);
        let mut r = csv::Reader::from_path(csv)?;
        let mut count = 0;
        for (c, rec) in r.records().enumerate() {
            let rec = rec?;
            if c >= d || rec.len() != d + 3 {
                return Err(Error::InvalidParameter(format!("malformed eigenpair row {c}")));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("row {c}: {e}")))
            };
            mu[c] = parse(&rec[1])?;
            sig[c] = parse(&rec[2])?;
            for i in 0..d {
                vecs[(i, c)] = parse(&rec[i + 3])?;
            }
            let expect = sigma(&params, mu[c]);
            if (expect - sig[c]).abs() > 1e-12 * expect.abs() {
                return Err(Error::InvalidParameter(format!(
                    "row {c}: sigma {} inconsistent with header parameters",
                    sig[c]
                )));
            }
            count += 1;
        }
        if count != d {
            return Err(Error::InvalidParameter(format!("expected {d} eigenpairs, read {count}")));
        }
        Ok(CovarianceModel {
            beta: header.beta,
            tau: header.tau,
            alpha: header.alpha,
            mesh,
            laplacian_eigenvalues: mu,
            eigenvalues: sig,
            eigenvectors: vecs,
        })
    }
}
