use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bilevel::{GradientKind, HDecay, LambdaInterval, SgdConfig};
use crate::error::{Error, Result};
use crate::field_prior::CovarianceParams;
use crate::lower::GaussNewtonOptions;

/// Presets compiled into the binary, addressable by name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("scalar-linear", include_str!("../../presets/scalar-linear.json")),
    ("matrix-linear", include_str!("../../presets/matrix-linear.json")),
    ("laplace2d", include_str!("../../presets/laplace2d.json")),
    ("laplace1d-dim", include_str!("../../presets/laplace1d-dim.json")),
    ("darcy2d", include_str!("../../presets/darcy2d.json")),
    ("eikonal2d", include_str!("../../presets/eikonal2d.json")),
    ("signal-denoise", include_str!("../../presets/signal-denoise.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Identity,
    /// Entries `N(0, 1/dim)`, drawn once from the preset seed.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Model {
    /// Finite-dimensional `y = Au + η` with `C₀ = diag(i^(−c0_decay))`.
    Linear {
        dim: usize,
        observations: usize,
        operator: OperatorKind,
        gamma: f64,
        lambda_star: f64,
        c0_decay: f64,
    },
    /// Point observations of the Poisson solution `−Δp = u`.
    Laplace {
        dimension: usize,
        nodes: usize,
        prior: CovarianceParams,
        lambda_star: f64,
        observations: usize,
        gamma: f64,
        /// KL modes kept in the prior; `None` keeps all.
        truncation: Option<usize>,
    },
    /// 1D Laplace on meshes `h = 2^-k`, with observation points shared
    /// across meshes.
    LaplaceDimension {
        mesh_exponents: Vec<u32>,
        prior: CovarianceParams,
        lambda_star: f64,
        observations: usize,
        gamma: f64,
        /// KL modes kept on every mesh; `None` keeps all.
        truncation: Option<usize>,
    },
    Darcy {
        nodes: usize,
        truncation: usize,
        prior: CovarianceParams,
        lambda_star: f64,
        gamma: f64,
        observations: usize,
        source: f64,
        gauss_newton: GaussNewtonOptions,
    },
    Eikonal {
        nodes: usize,
        truncation: usize,
        prior: CovarianceParams,
        lambda_star: f64,
        gamma: f64,
        observations: usize,
        init_radius: f64,
        gauss_newton: GaussNewtonOptions,
    },
    /// Compound Poisson paths observed in white noise.
    Signal {
        rate: f64,
        horizon: f64,
        grid: usize,
        noise_std: f64,
    },
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Linear { .. } => "linear",
            Model::Laplace { .. } => "laplace",
            Model::LaplaceDimension { .. } => "laplace-dimension",
            Model::Darcy { .. } => "darcy",
            Model::Eikonal { .. } => "eikonal",
            Model::Signal { .. } => "signal",
        }
    }

    /// `λ*` of the data-generating prior; `None` for the signal model.
    pub fn lambda_star(&self) -> Option<f64> {
        match self {
            Model::Linear { lambda_star, .. }
            | Model::Laplace { lambda_star, .. }
            | Model::LaplaceDimension { lambda_star, .. }
            | Model::Darcy { lambda_star, .. }
            | Model::Eikonal { lambda_star, .. } => Some(*lambda_star),
            Model::Signal { .. } => None,
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self, Model::Darcy { .. } | Model::Eikonal { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSettings {
    pub n_values: Vec<usize>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSettings {
    pub beta0: f64,
    pub exponent: f64,
    pub cap: bool,
    pub h0: f64,
    pub h_decay: HDecay,
    pub m: usize,
    pub lambda0: f64,
    pub iterations: usize,
    pub gradient: GradientKind,
    pub warm_start: bool,
    /// Independent runs in an online study.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSettings {
    pub fixed_lambdas: Vec<f64>,
    pub grid: LambdaInterval,
    pub grid_points: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub seed: u64,
    pub model: Model,
    pub interval: LambdaInterval,
    pub offline: OfflineSettings,
    pub sgd: SgdSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoise: Option<DenoiseSettings>,
    /// Wall-clock budget for a study; exceeding it is recorded in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
    /// Dotted overrides applied by `--full` (full-scale settings).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub full: serde_json::Map<String, Value>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Preset(msg.into())
}

impl Preset {
    /// Loads a preset from a file path, or by shipped name.
    pub fn load(name_or_path: &str) -> Result<Preset> {
        let text = match SHIPPED.iter().find(|(n, _)| *n == name_or_path) {
            Some((_, text)) => text.to_string(),
            None if Path::new(name_or_path).exists() => std::fs::read_to_string(name_or_path)?,
            None => {
                let names: Vec<&str> = SHIPPED.iter().map(|(n, _)| *n).collect();
                return Err(invalid(format!(
                    "no preset file or shipped preset named '{name_or_path}' (shipped: {})",
                    names.join(", ")
                )));
            }
        };
        Preset::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Preset> {
        let p: Preset = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Applies `--full` overrides, then the user's `key=value` overrides.
    /// Keys are dotted paths that must already exist; values are parsed as
    /// JSON, falling back to a string.
    pub fn resolve(&self, full: bool, overrides: &[(String, String)]) -> Result<Preset> {
        let mut value = serde_json::to_value(self)?;
        if full {
            for (k, v) in &self.full {
                set_path(&mut value, k, v.clone())?;
            }
        }
        for (k, raw) in overrides {
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut value, k, v)?;
        }
        let p: Preset = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.interval.validate()?;
        self.sgd_config(self.seed)?;
        if self.offline.n_values.is_empty()
            || self.offline.n_values.contains(&0)
            || self.offline.n_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(invalid("offline.n_values must be nonempty, positive and increasing"));
        }
        if self.offline.repetitions == 0 || self.sgd.seeds == 0 {
            return Err(invalid("repetitions and seeds must be >= 1"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("model.{name} must be > 0, got {v}")))
            }
        };
        let nonnegative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("model.{name} must be >= 0, got {v}")))
            }
        };
        if let Some(ls) = self.model.lambda_star() {
            positive("lambda_star", ls)?;
        }
        match &self.model {
            Model::Linear { dim, observations, gamma, c0_decay, .. } => {
                nonnegative("gamma", *gamma)?;
                nonnegative("c0_decay", *c0_decay)?;
                if *dim == 0 || *observations == 0 {
                    return Err(invalid("model.dim and model.observations must be >= 1"));
                }
            }
            Model::Laplace { dimension, prior, gamma, .. } => {
                nonnegative("gamma", *gamma)?;
                prior.validate()?;
                if !(1..=2).contains(dimension) {
                    return Err(invalid("model.dimension must be 1 or 2"));
                }
            }
            Model::LaplaceDimension { mesh_exponents, prior, gamma, truncation, .. } => {
                nonnegative("gamma", *gamma)?;
                prior.validate()?;
                if mesh_exponents.is_empty() || mesh_exponents.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("model.mesh_exponents must be nonempty and increasing"));
                }
                let coarse = (1usize << mesh_exponents[0]) - 1;
                if truncation.is_some_and(|t| t == 0 || t > coarse) {
                    return Err(invalid(format!(
                        "model.truncation must lie in 1..={coarse} (coarsest mesh unknowns)"
                    )));
                }
            }
            Model::Darcy { gamma, prior, .. } | Model::Eikonal { gamma, prior, .. } => {
                positive("gamma", *gamma)?;
                prior.validate()?;
            }
            Model::Signal { rate, horizon, grid, noise_std } => {
                nonnegative("rate", *rate)?;
                positive("horizon", *horizon)?;
                positive("noise_std", *noise_std)?;
                if *grid < 2 {
                    return Err(invalid("model.grid must be >= 2"));
                }
            }
        }
        if let Some(d) = &self.denoise {
            d.grid.validate()?;
            if d.grid_points < 3 || d.instances == 0 {
                return Err(invalid("denoise.grid_points must be >= 3 and instances >= 1"));
            }
        }
        Ok(())
    }

    pub fn sgd_config(&self, seed: u64) -> Result<SgdConfig> {
        let s = &self.sgd;
        let c = SgdConfig {
            beta0: s.beta0,
            exponent: s.exponent,
            cap: s.cap,
            h0: s.h0,
            h_decay: s.h_decay,
            interval: self.interval,
            m: s.m,
            lambda0: s.lambda0,
            iterations: s.iterations,
            gradient: s.gradient,
            warm_start: s.warm_start,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    /// Canonical JSON of the resolved preset.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("preset serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Short hash used in CSV rows.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let missing = || invalid(format!("unknown preset key '{path}'"));
        let next = match cur {
            Value::Object(map) => map.get_mut(*part).ok_or_else(missing)?,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| missing())?;
                items.get_mut(idx).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
        if i + 1 == parts.len() {
            *next = v;
            return Ok(());
        }
        cur = next;
    }
    Err(invalid("empty override key"))
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(invalid(format!("override '{s}' is not of the form key=value"))),
    }
}
