use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::preset::{Model, Preset};
use super::problem::Problem;
use crate::bilevel::{
    minimize_on_interval, offline_minimize, run_bsgd, LinearEmpiricalLoss, OfflineEstimate, SgdTrace,
    TrainingPair,
};
use crate::error::{Error, Result};
use crate::field_prior::{build_covariance, Boundary, Mesh};
use crate::lower::LowerSolver;
use crate::rng::role;

/// Largest tolerated fraction of boundary-flagged offline estimates.
pub const MAX_BOUNDARY_FRACTION: f64 = 0.1;

/// Ordinary least squares fit of `ln y` on `ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the slope; needs at least three points.
    pub half_width: Option<f64>,
}

pub fn fit_log_log(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("rate fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("rate fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half_width = if lx.len() > 2 {
        let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let df = n - 2.0;
        let t = StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(0.975);
        Some(t * (rss / df / sxx).sqrt())
    } else {
        None
    };
    Ok(RateFit { slope, intercept, half_width })
}

/// Mean and plug-in standard error; the latter is `None` for one sample.
pub fn mean_and_se(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub n: usize,
    pub mse: f64,
    pub std_error: Option<f64>,
    pub repetitions: usize,
    pub boundary_flags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub lambda_star: f64,
    pub rows: Vec<MseRow>,
    pub fit: RateFit,
}

/// Offline estimates `λ̂_n` for every `n` of the preset from replication
/// `r`, whose dataset comes from path `(PRIOR, r)`; smaller `n` use prefixes.
pub fn offline_replication(preset: &Preset, problem: &Problem, r: usize) -> Result<Vec<OfflineEstimate>> {
    let ns = &preset.offline.n_values;
    let solver = problem.solver()?;
    let set = problem.generate_dataset(*ns.last().unwrap(), preset.seed, &[role::PRIOR, r as u64])?;
    match problem.spectral() {
        Some(spectral) => LinearEmpiricalLoss::nested(spectral, &set, ns, problem.loss)?
            .iter()
            .map(|stats| minimize_on_interval(preset.interval, |l| Ok(stats.value(l))))
            .collect(),
        None => ns
            .iter()
            .map(|&n| offline_minimize(&set.prefix(n), preset.interval, solver.as_ref(), problem.loss))
            .collect(),
    }
}

fn offline_estimates(preset: &Preset, problem: &Problem) -> Result<Vec<Vec<(f64, bool)>>> {
    (0..preset.offline.repetitions)
        .into_par_iter()
        .map(|r| {
            Ok(offline_replication(preset, problem, r)?
                .into_iter()
                .map(|e| (e.lambda, e.boundary))
                .collect())
        })
        .collect()
}

fn mse_rows(ns: &[usize], estimates: &[Vec<(f64, bool)>], lambda_star: f64) -> Result<Vec<MseRow>> {
    let rows: Vec<MseRow> = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let sq: Vec<f64> = estimates.iter().map(|e| (e[i].0 - lambda_star).powi(2)).collect();
            let (mse, se) = mean_and_se(&sq);
            MseRow {
                n,
                mse,
                std_error: se,
                repetitions: estimates.len(),
                boundary_flags: estimates.iter().filter(|e| e[i].1).count(),
            }
        })
        .collect();
    let flagged: usize = rows.iter().map(|r| r.boundary_flags).sum();
    let total = ns.len() * estimates.len();
    if flagged as f64 > MAX_BOUNDARY_FRACTION * total as f64 {
        return Err(Error::TooManyBoundary { flagged, total });
    }
    Ok(rows)
}

/// Monte Carlo MSE of `λ̂_n` against `n`, with a log–log rate fit.
pub fn consistency_study(preset: &Preset) -> Result<ConsistencyResult> {
    let problem = Problem::from_preset(preset)?;
    let lambda_star = problem
        .lambda_star
        .ok_or_else(|| Error::Preset("consistency study needs a model with lambda_star".into()))?;
    let estimates = offline_estimates(preset, &problem)?;
    let rows = mse_rows(&preset.offline.n_values, &estimates, lambda_star)?;
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let fit = fit_log_log(&x, &y)?;
    Ok(ConsistencyResult { lambda_star, rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshRow {
    pub mesh_exponent: u32,
    pub dofs: usize,
    /// Operator trace of `C₀` on this mesh.
    pub trace: f64,
    pub cells: Vec<MseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub lambda_star: f64,
    pub n_values: Vec<usize>,
    pub meshes: Vec<MeshRow>,
    /// max/min MSE across meshes, per `n`.
    pub flatness: Vec<f64>,
}

/// MSE of `λ̂_n` per mesh and `n`. Replication `r` uses the same random
/// numbers on every mesh.
pub fn dimension_study(preset: &Preset) -> Result<DimensionResult> {
    let Model::LaplaceDimension { prior, lambda_star, .. } = &preset.model else {
        return Err(Error::Preset("dimension study needs a laplace-dimension preset".into()));
    };
    let family = Problem::dimension_family(preset)?;
    let mut meshes = Vec::new();
    for (k, problem) in &family {
        let mesh = Mesh::with_spacing_exponent(1, *k, Boundary::Dirichlet)?;
        let trace = build_covariance(&mesh, *prior)?.trace();
        let estimates = offline_estimates(preset, problem)?;
        meshes.push(MeshRow {
            mesh_exponent: *k,
            dofs: mesh.dofs(),
            trace,
            cells: mse_rows(&preset.offline.n_values, &estimates, *lambda_star)?,
        });
    }
    let flatness = (0..preset.offline.n_values.len())
        .map(|i| {
            let v: Vec<f64> = meshes.iter().map(|m| m.cells[i].mse).collect();
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(DimensionResult {
        lambda_star: *lambda_star,
        n_values: preset.offline.n_values.clone(),
        meshes,
        flatness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRun {
    pub seed_index: usize,
    pub bar_lambda: f64,
    /// `|λ̄_n − λ*|²`, when `λ*` is known.
    pub sq_error: Option<f64>,
    pub skipped: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub lambda_star: Option<f64>,
    pub runs: Vec<OnlineRun>,
    pub median_sq_error: Option<f64>,
    pub iqr_sq_error: Option<f64>,
    #[serde(skip)]
    pub traces: Vec<SgdTrace>,
}

/// One SGD run on fresh pairs streamed from path `(SGD, run)`.
pub fn sgd_run(preset: &Preset, problem: &Problem, solver: &dyn LowerSolver, run: usize) -> Result<SgdTrace> {
    let config = preset.sgd_config(preset.seed)?;
    let mut source =
        |k: usize| -> Result<TrainingPair> { problem.sample_pair(preset.seed, &[role::SGD, run as u64], k - 1) };
    run_bsgd(&mut source, solver, problem.loss, &config)
}

/// Bilevel SGD over `sgd.seeds` independent streams.
pub fn online_study(preset: &Preset) -> Result<OnlineResult> {
    let problem = Problem::from_preset(preset)?;
    let solver: Arc<dyn LowerSolver> = problem.solver()?;
    let traces: Vec<SgdTrace> = (0..preset.sgd.seeds)
        .into_par_iter()
        .map(|s| sgd_run(preset, &problem, solver.as_ref(), s))
        .collect::<Result<_>>()?;
    let runs: Vec<OnlineRun> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| OnlineRun {
            seed_index: i,
            bar_lambda: t.bar_lambda,
            sq_error: problem.lambda_star.map(|l| (t.bar_lambda - l).powi(2)),
            skipped: t.skipped,
            flagged: t.flagged,
        })
        .collect();
    let errs: Option<Vec<f64>> = runs.iter().map(|r| r.sq_error).collect();
    Ok(OnlineResult {
        lambda_star: problem.lambda_star,
        median_sq_error: errs.as_ref().map(|e| median(e)),
        iqr_sq_error: errs.as_ref().map(|e| quantile(e, 0.75) - quantile(e, 0.25)),
        runs,
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub instance: usize,
    pub bar_lambda: f64,
    pub grid_lambda: f64,
    /// Per-sample MSE `‖u_λ − u‖²/d` for each fixed λ, in preset order.
    pub mse_fixed: Vec<f64>,
    pub mse_learned: f64,
    pub mse_grid: f64,
    /// MSE at the grid neighbours of `grid_lambda` (equal to it at the ends).
    pub mse_grid_neighbours: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub fixed_lambdas: Vec<f64>,
    pub rows: Vec<DenoiseRow>,
    /// Fraction of instances where the learned λ beats every fixed λ.
    pub beats_fixed: f64,
    /// Fraction of instances within 1.15× of the grid optimum.
    pub near_grid_optimum: f64,
}

pub const NEAR_OPTIMUM_FACTOR: f64 = 1.15;

/// Learned versus fixed and per-instance optimal λ on held-out signals.
pub fn denoise_study(preset: &Preset) -> Result<DenoiseResult> {
    let settings = preset
        .denoise
        .as_ref()
        .ok_or_else(|| Error::Preset("denoise study needs a denoise section".into()))?;
    let problem = Problem::from_preset(preset)?;
    let solver = problem.solver()?;
    let grid = settings.grid.log_grid(settings.grid_points);
    let rows: Vec<DenoiseRow> = (0..settings.instances)
        .into_par_iter()
        .map(|i| {
            let trace = sgd_run(preset, &problem, solver.as_ref(), i)?;
            let test = problem.sample_pair(preset.seed, &[role::TEST, i as u64], 0)?;
            let d = test.u.len() as f64;
            let mse = |l: f64| -> Result<f64> { Ok((solver.solve_u(&test.y, l)? - &test.u).norm_squared() / d) };
            let on_grid: Vec<f64> = grid.iter().map(|&l| mse(l)).collect::<Result<_>>()?;
            let best = (0..grid.len()).min_by(|&a, &b| on_grid[a].total_cmp(&on_grid[b])).unwrap();
            let nb = (on_grid[best.saturating_sub(1)], on_grid[(best + 1).min(grid.len() - 1)]);
            Ok(DenoiseRow {
                instance: i,
                bar_lambda: trace.bar_lambda,
                grid_lambda: grid[best],
                mse_fixed: settings.fixed_lambdas.iter().map(|&l| mse(l)).collect::<Result<_>>()?,
                mse_learned: mse(trace.bar_lambda)?,
                mse_grid: on_grid[best],
                mse_grid_neighbours: nb,
            })
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&DenoiseRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64;
    Ok(DenoiseResult {
        fixed_lambdas: settings.fixed_lambdas.clone(),
        beats_fixed: count(&|r| r.mse_fixed.iter().all(|&m| r.mse_learned < m)),
        near_grid_optimum: count(&|r| r.mse_learned <= NEAR_OPTIMUM_FACTOR * r.mse_grid),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fit() {
        let x = [10.0, 100.0, 1000.0, 10000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.8)).collect();
        let f = fit_log_log(&x, &y).unwrap();
        assert!((f.slope + 0.8).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.half_width.unwrap() < 1e-6);
        let two = fit_log_log(&x[..2], &y[..2]).unwrap();
        assert!(two.half_width.is_none());
        assert!(fit_log_log(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    }

    #[test]
    fn half_width_matches_textbook_value() {
        // Residuals ±0.1 around slope 1 at ln x = 0, 1, 2, 3.
        let lx = [0.0f64, 1.0, 2.0, 3.0];
        let r = [0.1, -0.1, -0.1, 0.1];
        let x: Vec<f64> = lx.iter().map(|v| v.exp()).collect();
        let y: Vec<f64> = lx.iter().zip(r).map(|(v, e)| (v + e).exp()).collect();
        let f = fit_log_log(&x, &y).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        // se = sqrt(0.04/2/5), t_{0.975,2} = 4.302653
        let expected = 4.302652729911275 * (0.04f64 / 2.0 / 5.0).sqrt();
        assert!((f.half_width.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_and_se(&[2.0]), (2.0, None));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se.unwrap() - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }
}
