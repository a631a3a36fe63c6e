use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Admissible range `Λ = [λ_l, λ_u]` with `0 < λ_l < λ_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaInterval {
    pub lower: f64,
    pub upper: f64,
}

impl Default for LambdaInterval {
    fn default() -> Self {
        LambdaInterval { lower: 1e-4, upper: 10.0 }
    }
}

impl LambdaInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let iv = LambdaInterval { lower, upper };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower > 0.0 && self.upper.is_finite() && self.lower < self.upper {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "lambda interval must satisfy 0 < lower < upper, got {self}"
            )))
        }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        (self.lower..=self.upper).contains(&lambda)
    }

    /// The projection χ onto the interval. NaN maps to NaN.
    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    /// `n ≥ 2` log-spaced points including both endpoints exactly.
    pub fn log_grid(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2, "log grid needs at least two points");
        let (a, b) = (self.lower.ln(), self.upper.ln());
        let mut g: Vec<f64> = (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect();
        g[0] = self.lower;
        g[n - 1] = self.upper;
        g
    }
}

impl std::fmt::Display for LambdaInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lower, self.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_bounds() {
        assert!(LambdaInterval::new(0.0, 1.0).is_err());
        assert!(LambdaInterval::new(1.0, 1.0).is_err());
        assert!(LambdaInterval::new(2.0, 1.0).is_err());
        assert!(LambdaInterval::new(1e-4, f64::INFINITY).is_err());
    }

    #[test]
    fn grid_hits_endpoints() {
        let iv = LambdaInterval::new(1e-4, 10.0).unwrap();
        let g = iv.log_grid(64);
        assert_eq!(g.len(), 64);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[63], 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn projection_clamps_exactly() {
        let iv = LambdaInterval::new(0.1, 2.0).unwrap();
        assert_eq!(iv.project(-5.0), 0.1);
        assert_eq!(iv.project(0.5), 0.5);
        assert_eq!(iv.project(1e9), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn projection_is_non_expansive(
            lo in 1e-4f64..1.0,
            width in 1e-3f64..10.0,
            t in 0.0f64..=1.0,
            xs in proptest::collection::vec(-100.0f64..100.0, 1..200),
        ) {
            let iv = LambdaInterval::new(lo, lo + width).unwrap();
            let star = iv.lower + t * (iv.upper - iv.lower);
            for x in xs {
                let p = iv.project(x);
                prop_assert!(iv.contains(p));
                prop_assert!((p - star).abs() <= (x - star).abs());
            }
        }
    }
}
