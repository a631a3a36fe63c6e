//! Presets, data generation, studies and their on-disk artifacts.

pub mod output;
pub mod preset;
pub mod problem;
pub mod study;

pub use output::{differing_files, Manifest, SCHEMA_VERSION};
pub use preset::{parse_override, Model, Preset, SHIPPED};
pub use problem::Problem;
pub use study::{
    consistency_study, denoise_study, dimension_study, fit_log_log, offline_replication, online_study, sgd_run, ConsistencyResult,
    DenoiseResult, DimensionResult, OnlineResult, RateFit,
};
