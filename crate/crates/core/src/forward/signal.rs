//! Compound Poisson signals and the second-difference smoother used to
//! denoise them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Sampled compound Poisson path on `t_i = i T / d`, `i = 1..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub values: DVector<f64>,
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
}

impl SignalPath {
    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }
}

/// Time grid `t_i = i T / d`.
pub fn time_grid(horizon: f64, grid: usize) -> Vec<f64> {
    (1..=grid).map(|i| i as f64 * horizon / grid as f64).collect()
}

/// Draws `N ~ Poisson(rT)` jumps at uniform times with standard normal sizes.
pub fn signal_sample<R: Rng + ?Sized>(
    rate: f64,
    horizon: f64,
    grid: usize,
    rng: &mut R,
) -> Result<SignalPath> {
    if !(rate >= 0.0 && rate.is_finite()) || !(horizon > 0.0) || grid == 0 {
        return Err(Error::InvalidParameter(format!(
            "signal needs rate >= 0, horizon > 0, grid >= 1 (got {rate}, {horizon}, {grid})"
        )));
    }
    let count = if rate * horizon > 0.0 {
        let p = Poisson::new(rate * horizon)
            .map_err(|e| Error::InvalidParameter(format!("poisson rate: {e}")))?;
        p.sample(rng) as usize
    } else {
        0
    };
    let mut jumps: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.random::<f64>() * horizon, rng.sample::<f64, _>(StandardNormal)))
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let times = time_grid(horizon, grid);
    let mut values = DVector::zeros(grid);
    let mut level = 0.0;
    let mut next = 0;
    for (i, &t) in times.iter().enumerate() {
        while next < jumps.len() && jumps[next].0 <= t {
            level += jumps[next].1;
            next += 1;
        }
        values[i] = level;
    }
    Ok(SignalPath {
        values,
        jump_times: jumps.iter().map(|j| j.0).collect(),
        jump_sizes: jumps.iter().map(|j| j.1).collect(),
    })
}

/// `−Δ_h` on the signal grid: Dirichlet at `t = 0`, Neumann at `t = T`.
///
/// This is the inverse of the regularization matrix `L`; the smoother is
/// `u_λ = (Γ⁻¹ + λ L⁻¹)⁻¹ Γ⁻¹ y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDifference {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SecondDifference {
    pub fn new(horizon: f64, grid: usize) -> Result<Self> {
        if grid < 2 || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "second difference needs grid >= 2 and horizon > 0 (got {grid}, {horizon})"
            )));
        }
        let h = horizon / grid as f64;
        let s = 1.0 / (h * h);
        let mut diag = vec![2.0 * s; grid];
        diag[grid - 1] = s;
        Ok(SecondDifference {
            diag,
            off: vec![-s; grid - 1],
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            out[i] = self.diag[i] * v[i];
            if i + 1 < n {
                out[i] += self.off[i] * v[i + 1];
            }
            if i > 0 {
                out[i] += self.off[i - 1] * v[i - 1];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.off[i]
            } else if j + 1 == i {
                self.off[j]
            } else {
                0.0
            }
        })
    }
}

/// Total variation `Σ |u_{i+1} − u_i|`.
pub fn total_variation(u: &DVector<f64>) -> f64 {
    u.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_rate_is_zero_path() {
        let p = signal_sample(0.0, 1.0, 50, &mut stream(1, &[])).unwrap();
        assert_eq!(p.jumps(), 0);
        assert_eq!(p.values.amax(), 0.0);
    }

    #[test]
    fn mean_jump_count() {
        let m = 2000;
        let mut rng = stream(2, &[]);
        let total: usize = (0..m)
            .map(|_| signal_sample(10.0, 1.0, 20, &mut rng).unwrap().jumps())
            .sum();
        let mean = total as f64 / m as f64;
        assert!((mean - 10.0).abs() <= 3.0 * (10.0f64 / m as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn path_changes_only_at_jumps() {
        let grid = 400;
        let p = signal_sample(10.0, 1.0, grid, &mut stream(3, &[])).unwrap();
        let t = time_grid(1.0, grid);
        for i in 1..grid {
            let jumped = p.jump_times.iter().any(|&s| t[i - 1] < s && s <= t[i]);
            if !jumped {
                assert_eq!(p.values[i], p.values[i - 1]);
            }
        }
        let before_first = t.iter().take_while(|&&s| s < p.jump_times[0]).count();
        assert!(p.values.iter().take(before_first).all(|&v| v == 0.0));
    }

    #[test]
    fn second_difference_is_spd() {
        let l = SecondDifference::new(1.0, 30).unwrap();
        assert!(l.to_dense().cholesky().is_some());
        let v = DVector::from_fn(30, |i, _| (i as f64).cos());
        assert!((l.apply(&v) - l.to_dense() * &v).amax() < 1e-9);
    }
}
