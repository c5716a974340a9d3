//! Nonconformity scores and the least-squares base algorithm behind them.

use std::cmp::Ordering;

use crate::data::Dataset;
use crate::error::{ConformalError, Result};
use crate::linalg;

/// Linear regression function `x -> b_0 + b^T x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    coefficients: Vec<f64>,
    ridge_fallback: bool,
}

impl LinearRegressor {
    /// `coefficients` holds the intercept first, then one slope per covariate.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(ConformalError::InvalidInput(
                "need an intercept and at least one slope".into(),
            ));
        }
        Ok(Self {
            coefficients,
            ridge_fallback: false,
        })
    }

    /// Regressor predicting `c` everywhere on `dim` covariates.
    pub fn constant(c: f64, dim: usize) -> Self {
        let mut coefficients = vec![0.0; dim + 1];
        coefficients[0] = c;
        Self {
            coefficients,
            ridge_fallback: false,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Whether the fit had to fall back to a ridge solve because the design
    /// was rank deficient.
    pub fn used_ridge_fallback(&self) -> bool {
        self.ridge_fallback
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    /// Same regressor with its intercept moved by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coefficients[0] += c;
        out
    }
}

fn lexicographic(a: (&[f64], f64), b: (&[f64], f64)) -> Ordering {
    a.0.iter()
        .zip(b.0)
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.1.total_cmp(&b.1))
}

/// Least-squares fit with an intercept on raw covariates.
///
/// Rows are put into a canonical order before solving, so the fit is a
/// function of the multiset of points: any permutation of `data` gives
/// bit-identical coefficients.
pub fn fit_linear(data: &Dataset) -> Result<LinearRegressor> {
    if data.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    let d = data.dim();
    let p = d + 1;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| lexicographic(data.row(i), data.row(j)));

    let mut design = Vec::with_capacity(data.len() * p);
    let mut y = Vec::with_capacity(data.len());
    for &i in &order {
        let (x, yi) = data.row(i);
        design.push(1.0);
        design.extend_from_slice(x);
        y.push(yi);
    }
    let ls = linalg::least_squares(&design, p, &y);
    if ls.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(ConformalError::InvalidInput(
            "least-squares fit produced non-finite coefficients".into(),
        ));
    }
    Ok(LinearRegressor {
        coefficients: ls.coefficients,
        ridge_fallback: ls.ridge_fallback,
    })
}

/// Regression algorithm run on a multiset of points.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseAlgorithm {
    LeastSquares,
    /// Ignores its data and always returns the wrapped regressor.
    Frozen(LinearRegressor),
}

impl BaseAlgorithm {
    pub fn fit(&self, bag: &Dataset) -> Result<LinearRegressor> {
        match self {
            BaseAlgorithm::LeastSquares => fit_linear(bag),
            BaseAlgorithm::Frozen(mu) => Ok(mu.clone()),
        }
    }
}

/// Nonconformity score `S((x, y), Z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreFn {
    /// `|y - mu(x)|` with `mu` fitted on `Z` together with `(x, y)`.
    RefitResidual(BaseAlgorithm),
    /// `|y - mu0(x)|` for a regressor fitted elsewhere; `Z` is ignored.
    FixedResidual(LinearRegressor),
}

impl ScoreFn {
    pub fn refit_least_squares() -> Self {
        ScoreFn::RefitResidual(BaseAlgorithm::LeastSquares)
    }

    pub fn score(&self, point: (&[f64], f64), bag: &Dataset) -> Result<f64> {
        let (x, y) = point;
        match self {
            ScoreFn::FixedResidual(mu) => {
                check_dim(x.len(), mu.dim())?;
                Ok((y - mu.predict(x)).abs())
            }
            ScoreFn::RefitResidual(alg) => {
                if bag.is_empty() {
                    return Err(ConformalError::EmptyData);
                }
                let mu = alg.fit(&bag.with_point(x, y)?)?;
                Ok((y - mu.predict(x)).abs())
            }
        }
    }

    /// Scores `V_1..V_{n+1}` of the training points and the candidate
    /// `(x, y)`, each scored against the other `n` points.
    ///
    /// For the refit score every `V_i` fits on the same multiset
    /// `train + (x, y)`, so a single fit serves all of them.
    pub fn augmented_scores(&self, train: &Dataset, x: &[f64], y: f64) -> Result<Vec<f64>> {
        if train.is_empty() {
            return Err(ConformalError::EmptyData);
        }
        let mu = match self {
            ScoreFn::FixedResidual(mu) => {
                check_dim(x.len(), mu.dim())?;
                check_dim(train.dim(), mu.dim())?;
                mu.clone()
            }
            ScoreFn::RefitResidual(alg) => alg.fit(&train.with_point(x, y)?)?,
        };
        Ok(train
            .iter()
            .chain(std::iter::once((x, y)))
            .map(|(xi, yi)| (yi - mu.predict(xi)).abs())
            .collect())
    }
}

fn check_dim(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(ConformalError::InvalidInput(format!(
            "point has {got} covariates, regressor expects {expected}"
        )))
    }
}

pub fn score(f: &ScoreFn, point: (&[f64], f64), bag: &Dataset) -> Result<f64> {
    f.score(point, bag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_points_interpolated() {
        let data = Dataset::from_rows(&[[0.0], [1.0]], vec![1.0, 3.0]).unwrap();
        let mu = fit_linear(&data).unwrap();
        assert!((mu.coefficients()[0] - 1.0).abs() < 1e-12);
        assert!((mu.coefficients()[1] - 2.0).abs() < 1e-12);
        assert!(!mu.used_ridge_fallback());
    }

    #[test]
    fn constant_response() {
        let rows = [[0.3, -1.0], [1.2, 4.0], [2.0, 0.5], [-0.7, 2.2], [5.0, 1.0]];
        let data = Dataset::from_rows(&rows, vec![2.5; 5]).unwrap();
        let mu = fit_linear(&data).unwrap();
        assert!((mu.intercept() - 2.5).abs() < 1e-12);
        assert!(mu.coefficients()[1..].iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn recovers_noiseless_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = [0.7, -1.5, 2.0, 0.25, 3.0, -0.8];
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| truth[0] + r.iter().zip(&truth[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mu = fit_linear(&Dataset::from_rows(&rows, y).unwrap()).unwrap();
        for (b, t) in mu.coefficients().iter().zip(truth) {
            assert!((b - t).abs() < 1e-8, "{b} vs {t}");
        }
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[0] - r[2] + rng.random_range(-1.0..1.0))
            .collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let mu = fit_linear(&data).unwrap();
        let resid: Vec<f64> = data.iter().map(|(x, y)| y - mu.predict(x)).collect();
        let scale: f64 = resid.iter().map(|r| r.abs()).sum::<f64>();
        let intercept_dot: f64 = resid.iter().sum();
        assert!(intercept_dot.abs() <= 1e-8 * scale);
        for j in 0..3 {
            let col_norm: f64 = data.x().rows().map(|r| r[j].abs()).sum();
            let dot: f64 = data.x().rows().zip(&resid).map(|(r, e)| r[j] * e).sum();
            assert!(dot.abs() <= 1e-8 * scale * col_norm.max(1.0));
        }
    }

    #[test]
    fn rank_deficient_design_flags_ridge() {
        // Second covariate duplicates the first.
        let rows = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let data = Dataset::from_rows(&rows, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mu = fit_linear(&data).unwrap();
        assert!(mu.used_ridge_fallback());
        assert!((mu.predict(&[2.5, 2.5]) - 2.5).abs() < 1e-5);
    }

    #[test]
    fn empty_fit_is_an_error() {
        let data = Dataset::from_rows::<[f64; 1]>(&[], vec![]);
        // An empty row list has no dimension to infer.
        assert!(data.is_err() || fit_linear(&data.unwrap()).is_err());
        let empty = Dataset::from_rows(&[[1.0]], vec![1.0]).unwrap().select(&[]);
        assert!(matches!(fit_linear(&empty), Err(ConformalError::EmptyData)));
    }

    #[test]
    fn fixed_residual_examples() {
        let bag = Dataset::from_rows(&[[0.0]], vec![0.0]).unwrap();
        let two_x = ScoreFn::FixedResidual(LinearRegressor::new(vec![0.0, 2.0]).unwrap());
        assert_eq!(score(&two_x, (&[3.0], 6.0), &bag).unwrap(), 0.0);
        let zero = ScoreFn::FixedResidual(LinearRegressor::constant(0.0, 1));
        assert_eq!(score(&zero, (&[12.0], -4.0), &bag).unwrap(), 4.0);
    }

    #[test]
    fn refit_residual_three_points() {
        // Least squares through (0,0), (1,1), (2,5): slope 5/2, intercept -1/2,
        // so mu(2) = 4.5 and the score of (2,5) is 0.5.
        let bag = Dataset::from_rows(&[[0.0], [1.0]], vec![0.0, 1.0]).unwrap();
        let s = ScoreFn::refit_least_squares()
            .score((&[2.0], 5.0), &bag)
            .unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refit_score_ignores_bag_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(-5.0..5.0)).collect();
        let bag = Dataset::from_rows(&rows, y).unwrap();
        let f = ScoreFn::refit_least_squares();
        let point = ([0.3, -0.2], 1.7);
        let base = f.score((&point.0, point.1), &bag).unwrap();
        for shift in 1..25 {
            let idx: Vec<usize> = (0..25).map(|i| (i + shift) % 25).rev().collect();
            let permuted = bag.select(&idx);
            assert_eq!(f.score((&point.0, point.1), &permuted).unwrap(), base);
        }
        // The test point's position in the fitted multiset is irrelevant too.
        let aug = f.augmented_scores(&bag, &point.0, point.1).unwrap();
        assert_eq!(aug[25], base);
        for (i, &score_i) in aug.iter().take(25).enumerate() {
            let (xi, yi) = bag.row(i);
            let mut rest: Vec<usize> = (0..25).filter(|&j| j != i).collect();
            rest.reverse();
            let others = bag.select(&rest).with_point(&point.0, point.1).unwrap();
            assert_eq!(f.score((xi, yi), &others).unwrap(), score_i);
        }
    }

    #[test]
    fn fixed_equals_refit_with_frozen_algorithm() {
        let mu = LinearRegressor::new(vec![0.5, -1.0, 2.0]).unwrap();
        let bag = Dataset::from_rows(&[[1.0, 2.0], [0.0, -1.0], [3.0, 3.0]], vec![1.0, 0.0, -2.0])
            .unwrap();
        let fixed = ScoreFn::FixedResidual(mu.clone());
        let frozen = ScoreFn::RefitResidual(BaseAlgorithm::Frozen(mu));
        assert_eq!(
            fixed.augmented_scores(&bag, &[0.2, 0.4], 3.0).unwrap(),
            frozen.augmented_scores(&bag, &[0.2, 0.4], 3.0).unwrap()
        );
    }

    #[test]
    fn refit_needs_a_nonempty_bag() {
        let empty = Dataset::from_rows(&[[1.0]], vec![1.0]).unwrap().select(&[]);
        assert!(ScoreFn::refit_least_squares()
            .score((&[1.0], 1.0), &empty)
            .is_err());
    }
}
