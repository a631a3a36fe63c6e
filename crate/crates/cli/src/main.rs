use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bilevel_core::error::{Error, Result};
use bilevel_core::harness::output::{
    write_consistency, write_dataset, write_denoise, write_dimension, write_offline, write_online,
    write_trace,
};
use bilevel_core::harness::{
    consistency_study, denoise_study, differing_files, dimension_study, offline_replication,
    online_study, parse_override, sgd_run, Manifest, Model, Preset, Problem,
};
use bilevel_core::rng::role;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Learn Tikhonov regularization parameters by bilevel ERM and SGD.
#[derive(Debug, Parser)]
#[command(name = "bilevel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Shipped preset name or path to a preset JSON file
    #[arg(long)]
    preset: String,
    /// Override a preset key, e.g. --set sgd.beta0=0.5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory
    #[arg(long, env = "BILEVEL_OUT", default_value = "out")]
    out: PathBuf,
    /// Master seed, replacing the preset's
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, env = "BILEVEL_THREADS")]
    threads: Option<usize>,
    /// Apply the preset's full-scale settings
    #[arg(long)]
    full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKind {
    Consistency,
    Dimension,
    Online,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a preset and print the resolved configuration
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a training set
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Number of pairs
        #[arg(long)]
        n: usize,
    },
    /// Offline estimates for each n of the preset, from one dataset
    Offline {
        #[command(flatten)]
        common: Common,
    },
    /// One bilevel SGD run
    Sgd {
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte Carlo study
    Study {
        #[command(flatten)]
        common: Common,
        /// Study to run (default: dimension for laplace-dimension presets, else consistency)
        #[arg(long, value_enum)]
        study: Option<StudyKind>,
        /// Rerun into a scratch directory and check the CSVs are byte-identical
        #[arg(long)]
        verify: bool,
    },
    /// Compare learned, fixed and grid-optimal λ on test signals
    Denoise {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Dataset { .. } => "dataset",
            Command::Offline { .. } => "offline",
            Command::Sgd { .. } => "sgd",
            Command::Study { .. } => "study",
            Command::Denoise { .. } => "denoise",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Validate { common }
            | Command::Dataset { common, .. }
            | Command::Offline { common }
            | Command::Sgd { common }
            | Command::Study { common, .. }
            | Command::Denoise { common } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<Preset> {
    let overrides = common
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    let mut preset = Preset::load(&common.preset)?.resolve(common.full, &overrides)?;
    if let Some(seed) = common.seed {
        preset.seed = seed;
    }
    Ok(preset)
}

/// Runs a command body and writes its CSVs; returns file list and summary.
fn execute(command: &Command, preset: &Preset, dir: &Path) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    match command {
        Command::Validate { .. } => unreachable!(),
        Command::Dataset { n, .. } => {
            let problem = Problem::from_preset(preset)?;
            let set = problem.generate_dataset(*n, preset.seed, &[role::PRIOR, 0])?;
            Ok((write_dataset(dir, preset, &set)?, json!({ "pairs": n })))
        }
        Command::Offline { .. } => {
            let problem = Problem::from_preset(preset)?;
            let est = offline_replication(preset, &problem, 0)?;
            let summary = json!({
                "lambda_hat": est.iter().map(|e| e.lambda).collect::<Vec<_>>(),
                "boundary": est.iter().map(|e| e.boundary).collect::<Vec<_>>(),
            });
            Ok((write_offline(dir, preset, &est)?, summary))
        }
        Command::Sgd { .. } => {
            let problem = Problem::from_preset(preset)?;
            let solver = problem.solver()?;
            let trace = sgd_run(preset, &problem, solver.as_ref(), 0)?;
            let summary = serde_json::to_value(trace.summary(&preset.sgd_config(preset.seed)?))?;
            Ok((vec![write_trace(dir, &trace, 0)?], summary))
        }
        Command::Study { study, .. } => {
            let kind = study.unwrap_or(match preset.model {
                Model::LaplaceDimension { .. } => StudyKind::Dimension,
                _ => StudyKind::Consistency,
            });
            match kind {
                StudyKind::Consistency => {
                    let r = consistency_study(preset)?;
                    let summary = json!({ "study": "consistency", "fit": r.fit });
                    Ok((write_consistency(dir, preset, &r)?, summary))
                }
                StudyKind::Dimension => {
                    let r = dimension_study(preset)?;
                    let summary = json!({ "study": "dimension", "flatness": r.flatness });
                    Ok((write_dimension(dir, preset, &r)?, summary))
                }
                StudyKind::Online => {
                    let r = online_study(preset)?;
                    let summary = json!({
                        "study": "online",
                        "median_sq_error": r.median_sq_error,
                        "iqr_sq_error": r.iqr_sq_error,
                    });
                    Ok((write_online(dir, preset, &r)?, summary))
                }
            }
        }
        Command::Denoise { .. } => {
            let r = denoise_study(preset)?;
            let summary = json!({ "beats_fixed": r.beats_fixed, "near_grid_optimum": r.near_grid_optimum });
            Ok((write_denoise(dir, preset, &r)?, summary))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let command = &cli.command;
    let common = command.common();
    let preset = resolve(common)?;
    if let Command::Validate { .. } = command {
        println!("{}", serde_json::to_string_pretty(&preset)?);
        return Ok(());
    }
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let dir = &common.out;
    std::fs::create_dir_all(dir)?;
    let start = Instant::now();
    let (files, summary) = match execute(command, &preset, dir) {
        Ok(r) => r,
        Err(e) => {
            // Best effort: the original error is what gets reported.
            let _ = Manifest::failed(command.name(), &preset, start.elapsed(), &e).write(dir);
            return Err(e);
        }
    };
    let manifest = Manifest::new(command.name(), &preset, &files, start.elapsed(), summary);
    manifest.write(dir)?;
    if manifest.over_budget {
        eprintln!(
            "warning[over-budget]: run took {:.1}s, budget {:.1}s",
            manifest.elapsed_seconds,
            preset.budget_seconds.unwrap_or_default()
        );
    }
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    if let Command::Study { verify: true, .. } = command {
        verify(command, &preset, dir, start.elapsed())?;
    }
    Ok(())
}

/// Reruns the study into `dir/verify` and compares CSV bytes.
fn verify(command: &Command, preset: &Preset, dir: &Path, elapsed: Duration) -> Result<()> {
    let scratch = dir.join("verify");
    std::fs::create_dir_all(&scratch)?;
    let (files, summary) = execute(command, preset, &scratch)?;
    Manifest::new(command.name(), preset, &files, elapsed, summary).write(&scratch)?;
    let differing = differing_files(dir, &scratch)?;
    if differing.is_empty() {
        println!("verify: {} files byte-identical", files.len());
        std::fs::remove_dir_all(&scratch)?;
        Ok(())
    } else {
        Err(Error::NotReproducible(differing.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.tag());
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_NUMERICAL })
        }
    }
}
