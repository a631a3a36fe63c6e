//! Learning the regularization strength λ from training pairs.
//!
//! Offline, `λ̂_n` minimizes the empirical risk `F̂_n` over an interval.
//! Online, projected stochastic gradient descent consumes one pair per
//! step, using either the exact `∂_λ u_λ` or finite differences of the lower
//! solution. For linear Gaussian models [`LinearOracle`] evaluates the
//! population risk and its derivatives in closed form.
//!
//! The upper loss is `‖·‖²`, so both gradient variants carry its factor 2.

mod gradient;
mod interval;
mod loss;
mod offline;
mod oracle;
mod sgd;

pub use gradient::{
    sgd_gradient, sgd_gradient_approx, sgd_gradient_exact, sgd_gradient_loss_difference, GradientKind,
    GradientSample,
};
pub use interval::LambdaInterval;
pub use loss::{empirical_loss, LinearEmpiricalLoss, TrainingPair, TrainingSet, UpperLoss};
pub use offline::{minimize_on_interval, offline_minimize, OfflineEstimate, GOLDEN_WIDTH, GRID_POINTS};
pub use oracle::{c_n_sequence, ConvexityBounds, LinearOracle};
pub use sgd::{run_bsgd, DatasetSource, HDecay, PairSource, SgdConfig, SgdSummary, SgdTrace, MAX_SKIPPED_FRACTION};
