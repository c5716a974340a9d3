//! Conformal prediction bands.
//!
//! * Full conformal scans a grid of candidate responses `y` at the query `x`
//!   and keeps those whose score `V_{n+1}` does not exceed the `1 - alpha`
//!   quantile of `V_1..V_n` together with an atom at `+inf`.
//! * The weighted variants replace the uniform masses with likelihood-ratio
//!   weights `w(X_1), .., w(X_n)` on the training scores and `w(x)` on the
//!   `+inf` atom.
//! * Split conformal freezes the regressor, so the band at `x` is simply
//!   `mu0(x) +/- q` and needs no grid.
//!
//! The `*_accepts` functions answer the membership question for a single
//! `y` exactly, without a grid; coverage simulations use them.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ConformalError, Result};
use crate::scores::{LinearRegressor, ScoreFn};
use crate::shiftweights::{checked_weight, WeightFn};
use crate::wquantile::{quantile_sorted, WeightedDiscreteDist};

pub const DEFAULT_GRID_COUNT: usize = 1000;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::InvalidLevel(alpha))
    }
}

/// Uniform grid of `count` candidate responses from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YGrid {
    lo: f64,
    hi: f64,
    count: usize,
}

impl YGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ConformalError::InvalidInput(format!(
                "grid bounds [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        if count < 2 {
            return Err(ConformalError::InvalidInput(format!(
                "grid needs at least 2 points, got {count}"
            )));
        }
        Ok(Self { lo, hi, count })
    }

    /// `[min - 3 r, max + 3 r]` where `r` is the range of `y`.
    pub fn spanning(y: &[f64], count: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(ConformalError::EmptyData);
        }
        let min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if max > min { max - min } else { 1.0 };
        Self::new(min - 3.0 * range, max + 3.0 * range, count)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.point(i))
    }
}

/// `[center - half_width, center + half_width]`; the half-width may be
/// infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInterval {
    pub center: f64,
    pub half_width: f64,
}

impl SplitInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.half_width
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn is_infinite(&self) -> bool {
        self.half_width.is_infinite()
    }
}

/// Full-conformal set evaluated on a grid.
///
/// Each accepted grid point stands for the cell of half a grid step on
/// either side, so adjacent accepted points merge into closed intervals whose
/// endpoints sit midway between an accepted and a rejected point (or at the
/// grid edge).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    grid: YGrid,
    accepted: Vec<bool>,
    intervals: Vec<(f64, f64)>,
}

impl GridSet {
    pub fn from_accepted(grid: YGrid, accepted: Vec<bool>) -> Result<Self> {
        if accepted.len() != grid.count() {
            return Err(ConformalError::InvalidInput(format!(
                "{} acceptance flags for a grid of {}",
                accepted.len(),
                grid.count()
            )));
        }
        let half = 0.5 * grid.step();
        let mut intervals = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..=accepted.len() {
            let on = accepted.get(i).copied().unwrap_or(false);
            match (on, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    let lo = (grid.point(s) - half).max(grid.lo());
                    let hi = (grid.point(i - 1) + half).min(grid.hi());
                    intervals.push((lo, hi));
                    start = None;
                }
                _ => {}
            }
        }
        Ok(Self {
            grid,
            accepted,
            intervals,
        })
    }

    pub fn grid(&self) -> &YGrid {
        &self.grid
    }

    pub fn accepted(&self) -> &[bool] {
        &self.accepted
    }

    pub fn accepted_values(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| self.grid.point(i))
            .collect()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// No grid point was accepted.
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// An end of the grid was accepted, so the true set may extend past it.
    pub fn touches_boundary(&self) -> bool {
        self.accepted.first() == Some(&true) || self.accepted.last() == Some(&true)
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= y && y <= hi)
    }

    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }
}

/// Any conformal prediction set.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet {
    Split(SplitInterval),
    Grid(GridSet),
}

impl PredictionSet {
    pub fn contains(&self, y: f64) -> bool {
        match self {
            PredictionSet::Split(s) => s.contains(y),
            PredictionSet::Grid(g) => g.contains(y),
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            PredictionSet::Split(s) => s.length(),
            PredictionSet::Grid(g) => g.length(),
        }
    }
}

impl From<SplitInterval> for PredictionSet {
    fn from(s: SplitInterval) -> Self {
        PredictionSet::Split(s)
    }
}

impl From<GridSet> for PredictionSet {
    fn from(g: GridSet) -> Self {
        PredictionSet::Grid(g)
    }
}

/// Training weights `w(X_i)` and the test weight `w(x)`, validated.
pub(crate) fn shift_weights(train: &Dataset, x: &[f64], w: &WeightFn) -> Result<(Vec<f64>, f64)> {
    let train_w = w.eval_rows(train.x())?;
    let test_w = checked_weight(w.eval(x))?;
    if test_w == 0.0 && train_w.iter().all(|&v| v == 0.0) {
        return Err(ConformalError::ZeroWeights);
    }
    Ok((train_w, test_w))
}

/// `V_{n+1} <= Quantile(1 - alpha; sum_i m_i delta_{V_i} + m_{n+1} delta_inf)`
/// with `scores = V_1..V_{n+1}` and `masses = m_1..m_n`.
pub(crate) fn accepts_scores(scores: &[f64], masses: &[f64], inf_mass: f64, alpha: f64) -> Result<bool> {
    let (train_scores, test_score) = scores.split_at(scores.len() - 1);
    let dist = WeightedDiscreteDist::with_inf_atom(train_scores, masses, inf_mass)?;
    Ok(test_score[0] <= dist.quantile(1.0 - alpha)?)
}

fn scan_grid(
    train: &Dataset,
    x: &[f64],
    grid: &YGrid,
    score: &ScoreFn,
    alpha: f64,
    masses: &[f64],
    inf_mass: f64,
) -> Result<GridSet> {
    let accepted = grid
        .points()
        .map(|y| {
            let v = score.augmented_scores(train, x, y)?;
            accepts_scores(&v, masses, inf_mass, alpha)
        })
        .collect::<Result<Vec<bool>>>()?;
    GridSet::from_accepted(*grid, accepted)
}

fn check_query(train: &Dataset, x: &[f64]) -> Result<()> {
    if train.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    if x.len() != train.dim() {
        return Err(ConformalError::InvalidInput(format!(
            "query has {} covariates, training data has {}",
            x.len(),
            train.dim()
        )));
    }
    Ok(())
}

pub fn full_conformal(
    train: &Dataset,
    x: &[f64],
    grid: &YGrid,
    score: &ScoreFn,
    alpha: f64,
) -> Result<GridSet> {
    check_alpha(alpha)?;
    check_query(train, x)?;
    scan_grid(train, x, grid, score, alpha, &vec![1.0; train.len()], 1.0)
}

pub fn full_conformal_accepts(
    train: &Dataset,
    x: &[f64],
    y: f64,
    score: &ScoreFn,
    alpha: f64,
) -> Result<bool> {
    check_alpha(alpha)?;
    check_query(train, x)?;
    let v = score.augmented_scores(train, x, y)?;
    accepts_scores(&v, &vec![1.0; train.len()], 1.0, alpha)
}

/// Full conformal under covariate shift with likelihood ratio `w`.
pub fn weighted_full_conformal(
    train: &Dataset,
    x: &[f64],
    grid: &YGrid,
    score: &ScoreFn,
    alpha: f64,
    w: &WeightFn,
) -> Result<GridSet> {
    check_alpha(alpha)?;
    check_query(train, x)?;
    let (train_w, test_w) = shift_weights(train, x, w)?;
    scan_grid(train, x, grid, score, alpha, &train_w, test_w)
}

pub fn weighted_full_conformal_accepts(
    train: &Dataset,
    x: &[f64],
    y: f64,
    score: &ScoreFn,
    alpha: f64,
    w: &WeightFn,
) -> Result<bool> {
    check_alpha(alpha)?;
    check_query(train, x)?;
    let (train_w, test_w) = shift_weights(train, x, w)?;
    let v = score.augmented_scores(train, x, y)?;
    accepts_scores(&v, &train_w, test_w, alpha)
}

fn residuals(cal: &Dataset, mu0: &LinearRegressor) -> Result<Vec<f64>> {
    if cal.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    if cal.dim() != mu0.dim() {
        return Err(ConformalError::InvalidInput(format!(
            "calibration data has {} covariates, regressor expects {}",
            cal.dim(),
            mu0.dim()
        )));
    }
    Ok(cal.iter().map(|(x, y)| (y - mu0.predict(x)).abs()).collect())
}

pub fn split_conformal(
    cal: &Dataset,
    mu0: &LinearRegressor,
    x: &[f64],
    alpha: f64,
) -> Result<SplitInterval> {
    check_alpha(alpha)?;
    let r = residuals(cal, mu0)?;
    let dist = WeightedDiscreteDist::with_inf_atom(&r, &vec![1.0; r.len()], 1.0)?;
    Ok(SplitInterval {
        center: mu0.predict(x),
        half_width: dist.quantile(1.0 - alpha)?,
    })
}

pub fn weighted_split_conformal(
    cal: &Dataset,
    mu0: &LinearRegressor,
    x: &[f64],
    alpha: f64,
    w: &WeightFn,
) -> Result<SplitInterval> {
    check_alpha(alpha)?;
    let r = residuals(cal, mu0)?;
    let (train_w, test_w) = shift_weights(cal, x, w)?;
    let dist = WeightedDiscreteDist::with_inf_atom(&r, &train_w, test_w)?;
    Ok(SplitInterval {
        center: mu0.predict(x),
        half_width: dist.quantile(1.0 - alpha)?,
    })
}

/// Calibration residuals sorted once and reused across many queries.
///
/// Produces exactly the intervals of [`split_conformal`] /
/// [`weighted_split_conformal`] but costs `O(n)` per query instead of a sort.
#[derive(Debug, Clone)]
pub struct SplitCalibration {
    mu0: LinearRegressor,
    weight: Option<WeightFn>,
    residuals: Vec<f64>,
    masses: Vec<f64>,
}

impl SplitCalibration {
    pub fn unweighted(cal: &Dataset, mu0: &LinearRegressor) -> Result<Self> {
        let r = residuals(cal, mu0)?;
        Ok(Self::from_atoms(mu0.clone(), None, r, None))
    }

    pub fn weighted(cal: &Dataset, mu0: &LinearRegressor, w: &WeightFn) -> Result<Self> {
        let r = residuals(cal, mu0)?;
        let train_w = w.eval_rows(cal.x())?;
        Ok(Self::from_atoms(mu0.clone(), Some(w.clone()), r, Some(train_w)))
    }

    fn from_atoms(
        mu0: LinearRegressor,
        weight: Option<WeightFn>,
        residuals: Vec<f64>,
        masses: Option<Vec<f64>>,
    ) -> Self {
        let masses = masses.unwrap_or_else(|| vec![1.0; residuals.len()]);
        // Same atom order as `WeightedDiscreteDist::new`.
        let mut atoms: Vec<(f64, f64)> = residuals
            .into_iter()
            .zip(masses)
            .filter(|&(_, m)| m != 0.0)
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (residuals, masses) = atoms.into_iter().unzip();
        Self {
            mu0,
            weight,
            residuals,
            masses,
        }
    }

    pub fn regressor(&self) -> &LinearRegressor {
        &self.mu0
    }

    /// Calibration weights with nonzero mass, in ascending residual order.
    pub fn weights(&self) -> &[f64] {
        &self.masses
    }

    pub fn half_width(&self, alpha: f64, test_weight: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let test_weight = checked_weight(test_weight)?;
        if test_weight == 0.0 && self.masses.is_empty() {
            return Err(ConformalError::ZeroWeights);
        }
        Ok(quantile_sorted(
            1.0 - alpha,
            &self.residuals,
            &self.masses,
            test_weight,
        ))
    }

    pub fn interval(&self, x: &[f64], alpha: f64) -> Result<SplitInterval> {
        let test_weight = match &self.weight {
            Some(w) => w.eval(x),
            None => 1.0,
        };
        Ok(SplitInterval {
            center: self.mu0.predict(x),
            half_width: self.half_width(alpha, test_weight)?,
        })
    }
}
