use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise evaluation at `K` entries of a state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationOperator {
    indices: Vec<usize>,
    state_len: usize,
}

impl ObservationOperator {
    pub fn new(indices: Vec<usize>, state_len: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("need at least one observation".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= state_len) {
            return Err(Error::InvalidParameter(format!(
                "observation index {bad} outside state of length {state_len}"
            )));
        }
        Ok(ObservationOperator { indices, state_len })
    }

    /// Identity observation of a length-`n` state.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), n)
    }

    /// `k` distinct entries of `candidates`, uniformly without replacement.
    pub fn random<R: Rng + ?Sized>(
        candidates: &[usize],
        k: usize,
        state_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k > candidates.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {k} observation points from {} candidates",
                candidates.len()
            )));
        }
        let mut picked: Vec<usize> = sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        picked.sort_unstable();
        Self::new(picked, state_len)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn apply(&self, state: &DVector<f64>) -> DVector<f64> {
        assert_eq!(state.len(), self.state_len, "state length mismatch");
        DVector::from_iterator(self.len(), self.indices.iter().map(|&i| state[i]))
    }

    /// Selection matrix with unit indicator rows.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len(), self.state_len);
        for (r, &i) in self.indices.iter().enumerate() {
            m[(r, i)] = 1.0;
        }
        m
    }
}

/// Additive white noise `η ~ N(0, γ² I)`; `γ = 0` gives exact observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub gamma: f64,
}

impl Noise {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Noise { gamma })
    }

    pub fn variance(&self) -> f64 {
        self.gamma * self.gamma
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        DMatrix::identity(k, k) * self.variance()
    }

    pub fn perturb<R: Rng + ?Sized>(&self, clean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        if self.gamma == 0.0 {
            return clean.clone();
        }
        clean.map(|c| c + self.gamma * rng.sample::<f64, _>(StandardNormal))
    }
}

/// `y = O(state) + η`.
pub fn observe<R: Rng + ?Sized>(
    observation: &ObservationOperator,
    noise: &Noise,
    state: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    noise.perturb(&observation.apply(state), rng)
}
