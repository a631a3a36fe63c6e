//! Forward models: linear Laplace observation, Darcy flow, eikonal travel
//! time and the compound Poisson signal, plus pointwise observation with
//! additive Gaussian noise.
//!
//! The Laplace and Darcy solvers use the five-point stencil; on uniform
//! grids this agrees with piecewise-linear finite elements up to the load
//! scaling, and lets both models share one discretization core.

mod eikonal;
mod elliptic;
mod laplace;
mod map;
mod observation;
mod signal;

pub use eikonal::{fast_marching, fast_marching_with, FastMarching, Grid, DEFAULT_INIT_RADIUS};
pub use elliptic::{
    assemble_diffusion, clamp_events, darcy_forward, full_grid_field, guarded_exp,
    laplace_factor, laplace_forward, EXP_CLAMP,
};
pub use laplace::build_linear_a;
pub use map::{DarcyMap, EikonalMap, ForwardMap, LinearMap};
pub use observation::{observe, Noise, ObservationOperator};
pub use signal::{signal_sample, time_grid, total_variation, SecondDifference, SignalPath};
