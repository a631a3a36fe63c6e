//! Study artifacts: versioned CSV tables and a JSON run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::preset::Preset;
use crate::bilevel::{OfflineEstimate, SgdTrace, TrainingSet};
use super::study::{ConsistencyResult, DenoiseResult, DimensionResult, OnlineResult};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Opens `dir/file` and writes the `# schema:` line.
fn table(dir: &Path, file: &str, schema: &str) -> Result<(PathBuf, csv::Writer<fs::File>)> {
    let path = dir.join(file);
    let mut f = fs::File::create(&path)?;
    writeln!(f, "# schema: {schema} v{SCHEMA_VERSION}")?;
    Ok((path, csv::Writer::from_writer(f)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a CSV table; every row is prefixed with the seed and preset hash.
fn write_table(
    dir: &Path,
    file: &str,
    schema: &str,
    preset: &Preset,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<PathBuf> {
    let (path, mut w) = table(dir, file, schema)?;
    let hash = preset.short_hash();
    let seed = preset.seed.to_string();
    let mut h = vec!["seed", "preset_hash"];
    h.extend_from_slice(header);
    w.write_record(&h)?;
    for row in rows {
        let mut r = vec![seed.clone(), hash.clone()];
        r.extend(row);
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_consistency(dir: &Path, preset: &Preset, r: &ConsistencyResult) -> Result<Vec<PathBuf>> {
    let rows = r.rows.iter().map(|m| {
        vec![
            m.n.to_string(),
            m.mse.to_string(),
            opt(m.std_error),
            m.repetitions.to_string(),
            m.boundary_flags.to_string(),
        ]
    });
    let mse = write_table(
        dir,
        "consistency.csv",
        "consistency",
        preset,
        &["n", "mse", "std_error", "repetitions", "boundary_flags"],
        rows,
    )?;
    let fit = write_table(
        dir,
        "rate_fit.csv",
        "rate-fit",
        preset,
        &["slope", "intercept", "half_width"],
        [vec![r.fit.slope.to_string(), r.fit.intercept.to_string(), opt(r.fit.half_width)]],
    )?;
    Ok(vec![mse, fit])
}

pub fn write_dimension(dir: &Path, preset: &Preset, r: &DimensionResult) -> Result<Vec<PathBuf>> {
    let mut header = vec!["mesh_exponent".to_string(), "dofs".into(), "trace".into()];
    for n in &r.n_values {
        header.push(format!("mse_n{n}"));
        header.push(format!("se_n{n}"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = r.meshes.iter().map(|m| {
        let mut row = vec![m.mesh_exponent.to_string(), m.dofs.to_string(), m.trace.to_string()];
        for c in &m.cells {
            row.push(c.mse.to_string());
            row.push(opt(c.std_error));
        }
        row
    });
    let table = write_table(dir, "dimension.csv", "dimension", preset, &header, rows)?;
    let flat = write_table(
        dir,
        "flatness.csv",
        "flatness",
        preset,
        &["n", "max_over_min"],
        r.n_values.iter().zip(&r.flatness).map(|(n, f)| vec![n.to_string(), f.to_string()]),
    )?;
    Ok(vec![table, flat])
}

pub fn write_online(dir: &Path, preset: &Preset, r: &OnlineResult) -> Result<Vec<PathBuf>> {
    let rows = r.runs.iter().map(|o| {
        vec![
            o.seed_index.to_string(),
            o.bar_lambda.to_string(),
            opt(o.sq_error),
            o.skipped.to_string(),
            o.flagged.to_string(),
        ]
    });
    let mut files = vec![write_table(
        dir,
        "online.csv",
        "online",
        preset,
        &["seed_index", "bar_lambda", "sq_error", "skipped", "flagged"],
        rows,
    )?];
    for (i, t) in r.traces.iter().enumerate() {
        files.push(write_trace(dir, t, i)?);
    }
    Ok(files)
}

pub fn write_denoise(dir: &Path, preset: &Preset, r: &DenoiseResult) -> Result<Vec<PathBuf>> {
    let mut header = vec!["instance".to_string(), "bar_lambda".into(), "grid_lambda".into()];
    header.extend(r.fixed_lambdas.iter().map(|l| format!("mse_fixed_{l:e}")));
    header.extend(["mse_learned", "mse_grid", "mse_grid_left", "mse_grid_right"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = r.rows.iter().map(|d| {
        let mut row = vec![d.instance.to_string(), d.bar_lambda.to_string(), d.grid_lambda.to_string()];
        row.extend(d.mse_fixed.iter().map(|m| m.to_string()));
        row.extend([d.mse_learned, d.mse_grid, d.mse_grid_neighbours.0, d.mse_grid_neighbours.1].map(|m| m.to_string()));
        row
    });
    Ok(vec![write_table(dir, "denoise.csv", "denoise", preset, &header, rows)?])
}

/// Long-format dataset: one row per vector entry.
pub fn write_dataset(dir: &Path, preset: &Preset, set: &TrainingSet) -> Result<Vec<PathBuf>> {
    let rows = set.pairs.iter().enumerate().flat_map(|(j, p)| {
        let y = p.y.iter().enumerate().map(move |(i, v)| vec![j.to_string(), "y".into(), i.to_string(), v.to_string()]);
        let u = p.u.iter().enumerate().map(move |(i, v)| vec![j.to_string(), "u".into(), i.to_string(), v.to_string()]);
        y.chain(u)
    });
    Ok(vec![write_table(dir, "dataset.csv", "dataset", preset, &["pair", "field", "index", "value"], rows)?])
}

pub fn write_offline(dir: &Path, preset: &Preset, estimates: &[OfflineEstimate]) -> Result<Vec<PathBuf>> {
    let rows = preset.offline.n_values.iter().zip(estimates).map(|(n, e)| {
        vec![n.to_string(), e.lambda.to_string(), e.loss.to_string(), e.boundary.to_string()]
    });
    Ok(vec![write_table(dir, "offline.csv", "offline", preset, &["n", "lambda_hat", "loss", "boundary"], rows)?])
}

/// One SGD trace as `trace_000.csv`.
pub fn write_trace(dir: &Path, trace: &SgdTrace, index: usize) -> Result<PathBuf> {
    let path = dir.join(format!("trace_{index:03}.csv"));
    let mut f = fs::File::create(&path)?;
    writeln!(f, "# schema: sgd-trace v{SCHEMA_VERSION}")?;
    trace.write_csv(f)?;
    Ok(path)
}

/// Record of one CLI run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub preset: Preset,
    pub preset_hash: String,
    pub seed: u64,
    pub version: String,
    pub files: Vec<String>,
    pub elapsed_seconds: f64,
    pub over_budget: bool,
    /// Summary numbers of the run (median error, slope, ...).
    pub summary: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub tag: String,
    pub message: String,
}

impl Manifest {
    pub fn new(command: &str, preset: &Preset, files: &[PathBuf], elapsed: Duration, summary: serde_json::Value) -> Self {
        let elapsed_seconds = elapsed.as_secs_f64();
        Manifest {
            command: command.to_string(),
            preset: preset.clone(),
            preset_hash: preset.hash(),
            seed: preset.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            files: files
                .iter()
                .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
                .collect(),
            elapsed_seconds,
            over_budget: preset.budget_seconds.is_some_and(|b| elapsed_seconds > b),
            summary,
            error: None,
        }
    }

    pub fn failed(command: &str, preset: &Preset, elapsed: Duration, error: &Error) -> Self {
        let mut m = Manifest::new(command, preset, &[], elapsed, serde_json::Value::Null);
        m.error = Some(FailureRecord {
            tag: error.tag().to_string(),
            message: error.to_string(),
        });
        m
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

/// Files listed in both manifests whose bytes differ. Used to check that a
/// rerun with the same preset and seed reproduces its outputs.
pub fn differing_files(a: &Path, b: &Path) -> Result<Vec<String>> {
    let ma = Manifest::read(a)?;
    let mb = Manifest::read(b)?;
    if ma.preset_hash != mb.preset_hash {
        return Err(Error::Preset(format!(
            "runs use different presets ({} vs {})",
            &ma.preset_hash[..16],
            &mb.preset_hash[..16]
        )));
    }
    let mut out = Vec::new();
    for f in &ma.files {
        if !mb.files.contains(f) || fs::read(a.join(f))? != fs::read(b.join(f))? {
            out.push(f.clone());
        }
    }
    Ok(out)
}
