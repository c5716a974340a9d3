//! Kernel-localized conformal bands.
//!
//! For a center `x0` fixed in advance, weighting calibration scores by
//! `K((X_i - x0) / h)` turns local coverage around `x0` into a covariate-shift
//! problem: the test covariate is drawn from `P_X` reweighted by the kernel.
//! The band is only valid for the center it was built for; a new center
//! means a new band.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conformal::{self, GridSet, YGrid};
use crate::data::Dataset;
use crate::error::{ConformalError, Result};
use crate::scores::ScoreFn;
use crate::shiftweights::WeightFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `exp(-|u|^2 / 2)`
    Gaussian,
    /// `1{|u| <= 1}`
    Box,
    /// `max(0, 1 - |u|^2)`
    Epanechnikov,
}

impl std::str::FromStr for KernelKind {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelKind::Gaussian),
            "box" => Ok(KernelKind::Box),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            other => Err(ConformalError::InvalidInput(format!(
                "unknown kernel '{other}'"
            ))),
        }
    }
}

/// Kernel shape with a bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    bandwidth: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || bandwidth.is_infinite() {
            return Err(ConformalError::InvalidInput(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { kind, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, bandwidth)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Unscaled profile `K(u)`.
    pub fn profile(&self, u: &[f64]) -> f64 {
        let r2: f64 = u.iter().map(|v| v * v).sum();
        match self.kind {
            KernelKind::Gaussian => (-0.5 * r2).exp(),
            KernelKind::Box => {
                if r2 <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Epanechnikov => (1.0 - r2).max(0.0),
        }
    }

    /// `K((x - center) / h)`.
    pub fn weight(&self, x: &[f64], center: &[f64]) -> f64 {
        let u: Vec<f64> = x
            .iter()
            .zip(center)
            .map(|(a, c)| (a - c) / self.bandwidth)
            .collect();
        self.profile(&u)
    }

    /// Draws `omega` from the density proportional to `K`.
    pub fn sample_offset<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self.kind {
            KernelKind::Gaussian => (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
            // Rejection from the enclosing cube.
            KernelKind::Box | KernelKind::Epanechnikov => loop {
                let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let k = self.profile(&u);
                if k > 0.0 && rng.random::<f64>() < k {
                    break u;
                }
            },
        }
    }

    pub fn weight_fn(&self, center: &[f64]) -> WeightFn {
        WeightFn::KernelLocal {
            kernel: *self,
            center: center.to_vec(),
        }
    }
}

fn check_center(train: &Dataset, x0: &[f64], x: &[f64]) -> Result<()> {
    if x0.len() != train.dim() || x.len() != train.dim() {
        return Err(ConformalError::InvalidInput(format!(
            "center and query must have {} covariates",
            train.dim()
        )));
    }
    Ok(())
}

/// Conformal band at `x` localized around `x0`: weighted full conformal
/// with `w = K((. - x0) / h)`.
pub fn local_conformal(
    train: &Dataset,
    x0: &[f64],
    x: &[f64],
    grid: &YGrid,
    score: &ScoreFn,
    alpha: f64,
    kernel: &Kernel,
) -> Result<GridSet> {
    check_center(train, x0, x)?;
    conformal::weighted_full_conformal(train, x, grid, score, alpha, &kernel.weight_fn(x0))
}

/// Whether `y` belongs to the localized band at `x`.
pub fn local_conformal_accepts(
    train: &Dataset,
    x0: &[f64],
    x: &[f64],
    y: f64,
    score: &ScoreFn,
    alpha: f64,
    kernel: &Kernel,
) -> Result<bool> {
    check_center(train, x0, x)?;
    conformal::weighted_full_conformal_accepts(train, x, y, score, alpha, &kernel.weight_fn(x0))
}
