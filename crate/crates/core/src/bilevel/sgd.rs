use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gradient::{sgd_gradient, GradientKind};
use super::interval::LambdaInterval;
use super::loss::{TrainingPair, TrainingSet, UpperLoss};
use crate::error::{Error, Result};
use crate::lower::LowerSolver;
use crate::rng::Stream;

/// Difference-step policy for approximate gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HDecay {
    #[default]
    Fixed,
    /// `h_k = h₀ β_k^(1/4)`.
    StepScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// `β_k = beta0 · k^(−exponent)`.
    pub beta0: f64,
    pub exponent: f64,
    /// Cap each move at `|β_k g_k| ≤ λ₀/k`.
    #[serde(default)]
    pub cap: bool,
    pub h0: f64,
    #[serde(default)]
    pub h_decay: HDecay,
    pub interval: LambdaInterval,
    /// Tail window for `λ̄_n`.
    pub m: usize,
    pub lambda0: f64,
    pub iterations: usize,
    #[serde(default)]
    pub gradient: GradientKind,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_warm_start() -> bool {
    true
}

/// Largest tolerated fraction of skipped steps.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        self.interval.validate()?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return bad(format!("beta0 must be > 0, got {}", self.beta0));
        }
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return bad(format!("step exponent must lie in (1/2, 1], got {}", self.exponent));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return bad(format!("h0 must be > 0, got {}", self.h0));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.m == 0 || self.m > self.iterations {
            return bad(format!("tail window m = {} must lie in [1, {}]", self.m, self.iterations));
        }
        if !self.interval.contains(self.lambda0) {
            return bad(format!("lambda0 = {} lies outside the interval {}", self.lambda0, self.interval));
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.beta0 * (k as f64).powf(-self.exponent)
    }

    pub fn difference_step(&self, k: usize) -> f64 {
        match self.h_decay {
            HDecay::Fixed => self.h0,
            HDecay::StepScaled => self.h0 * self.step_size(k).powf(0.25),
        }
    }
}

/// Supplies the pair consumed at step `k` (1-based) with its data index.
pub trait PairSource {
    fn next_pair(&mut self, step: usize) -> Result<(usize, TrainingPair)>;
}

impl<F: FnMut(usize) -> Result<TrainingPair>> PairSource for F {
    fn next_pair(&mut self, step: usize) -> Result<(usize, TrainingPair)> {
        Ok((step - 1, self(step)?))
    }
}

/// Cycles through a fixed dataset, in order or reshuffled every epoch.
pub struct DatasetSource<'a> {
    set: &'a TrainingSet,
    order: Vec<usize>,
    shuffle: Option<Stream>,
}

impl<'a> DatasetSource<'a> {
    pub fn new(set: &'a TrainingSet, shuffle: Option<Stream>) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(DatasetSource {
            set,
            order: (0..set.len()).collect(),
            shuffle,
        })
    }
}

impl PairSource for DatasetSource<'_> {
    fn next_pair(&mut self, step: usize) -> Result<(usize, TrainingPair)> {
        let pos = (step - 1) % self.set.len();
        if pos == 0 {
            if let Some(rng) = self.shuffle.as_mut() {
                self.order.shuffle(rng);
            }
        }
        let idx = self.order[pos];
        Ok((idx, self.set.pairs[idx].clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    /// `λ_0, …, λ_n`.
    pub iterates: Vec<f64>,
    /// `g_k` for `k = 1..n`; NaN marks a skipped step.
    pub gradients: Vec<f64>,
    pub data_indices: Vec<usize>,
    pub bar_lambda: f64,
    pub skipped: usize,
    /// Steps whose approximate gradient was flagged.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSummary {
    pub bar_lambda: f64,
    pub final_lambda: f64,
    pub iterations: usize,
    pub skipped: usize,
    pub flagged: usize,
    pub config: SgdConfig,
}

impl SgdTrace {
    pub fn summary(&self, config: &SgdConfig) -> SgdSummary {
        SgdSummary {
            bar_lambda: self.bar_lambda,
            final_lambda: *self.iterates.last().unwrap(),
            iterations: self.gradients.len(),
            skipped: self.skipped,
            flagged: self.flagged,
            config: config.clone(),
        }
    }

    /// Columns `iteration, lambda, gradient, data_index`; row 0 is `λ_0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "lambda", "gradient", "data_index"])?;
        w.write_record(["0", &self.iterates[0].to_string(), "", ""])?;
        for k in 1..self.iterates.len() {
            w.write_record([
                k.to_string(),
                self.iterates[k].to_string(),
                self.gradients[k - 1].to_string(),
                self.data_indices[k - 1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projected bilevel SGD, `λ_k = χ(λ_{k−1} − β_k g_k)`.
///
/// Steps whose gradient is non-finite or whose lower solve fails keep
/// `λ_k = λ_{k−1}` and are counted; more than 5% of such steps is an error.
/// Failing to produce a pair is a hard error.
pub fn run_bsgd(
    source: &mut dyn PairSource,
    solver: &dyn LowerSolver,
    loss: UpperLoss,
    config: &SgdConfig,
) -> Result<SgdTrace> {
    config.validate()?;
    let n = config.iterations;
    let max_skipped = (MAX_SKIPPED_FRACTION * n as f64).floor() as usize;
    let mut iterates = Vec::with_capacity(n + 1);
    let mut gradients = Vec::with_capacity(n);
    let mut data_indices = Vec::with_capacity(n);
    let mut lambda = config.lambda0;
    iterates.push(lambda);
    let mut warm: Option<DVector<f64>> = None;
    let (mut skipped, mut flagged) = (0, 0);

    for k in 1..=n {
        let (idx, pair) = source.next_pair(k).map_err(|e| Error::at_pair(k - 1, e))?;
        let beta = config.step_size(k);
        let h = config.difference_step(k);
        let sample = sgd_gradient(config.gradient, &pair, lambda, h, solver, loss, warm.as_ref());
        let g = match sample {
            Ok(s) if s.value.is_finite() => {
                flagged += s.flagged as usize;
                if config.warm_start {
                    warm = Some(s.report.minimizer);
                }
                let mut step = beta * s.value;
                if config.cap {
                    let c = config.lambda0 / k as f64;
                    step = step.clamp(-c, c);
                }
                lambda = config.interval.project(lambda - step);
                s.value
            }
            Ok(_) | Err(_) => {
                if let Err(e) = &sample {
                    log::warn!("sgd step {k} skipped: {e}");
                }
                skipped += 1;
                if skipped > max_skipped {
                    return Err(Error::TooManySkipped { skipped, total: n });
                }
                f64::NAN
            }
        };
        gradients.push(g);
        data_indices.push(idx);
        iterates.push(lambda);
    }
    let tail = &iterates[n + 1 - config.m..];
    let bar_lambda = tail.iter().sum::<f64>() / config.m as f64;
    Ok(SgdTrace {
        iterates,
        gradients,
        data_indices,
        bar_lambda,
        skipped,
        flagged,
    })
}
