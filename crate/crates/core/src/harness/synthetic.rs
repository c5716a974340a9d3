//! Synthetic regression data with noise that grows along the first
//! covariate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::{ConformalError, Result};

/// `X ~ N(0, I_d)`, `Y = 1 + sum_j X_j + exp(noise_slope * X_1) * eps`,
/// `eps ~ N(0, 1)`.
///
/// Tilting `N(0, I)` by `exp(x^T beta)` gives `N(beta, I)`, so the shifted
/// population is available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroskedasticModel {
    pub dim: usize,
    pub noise_slope: f64,
}

impl Default for HeteroskedasticModel {
    fn default() -> Self {
        Self {
            dim: 2,
            noise_slope: 0.5,
        }
    }
}

impl HeteroskedasticModel {
    pub fn new(dim: usize, noise_slope: f64) -> Result<Self> {
        if dim == 0 || !noise_slope.is_finite() {
            return Err(ConformalError::InvalidInput(
                "dimension must be positive and the noise slope finite".into(),
            ));
        }
        Ok(Self { dim, noise_slope })
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        1.0 + x.iter().sum::<f64>()
    }

    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        (self.noise_slope * x[0]).exp()
    }

    pub fn response<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let eps: f64 = StandardNormal.sample(rng);
        self.mean(x) + self.noise_scale(x) * eps
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        self.generate_shifted(n, &vec![0.0; self.dim], rng)
    }

    /// Draws from the population tilted by `exp(x^T beta)`.
    pub fn generate_shifted<R: Rng + ?Sized>(&self, n: usize, beta: &[f64], rng: &mut R) -> Dataset {
        let mut x = Vec::with_capacity(n * self.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = beta
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(rng);
                    b + z
                })
                .collect();
            y.push(self.response(&row, rng));
            x.extend(row);
        }
        Dataset::new(Covariates::new(x, self.dim).expect("width is dim"), y)
            .expect("rows match responses")
    }
}
