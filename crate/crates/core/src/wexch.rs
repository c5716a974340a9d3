//! Conformal prediction for weighted exchangeable data.
//!
//! Points `Z_1..Z_{n+1}` are weighted exchangeable with weight functions
//! `w_1..w_{n+1}` when their joint density factors as `prod_j w_j(z_j)` times
//! a permutation-symmetric function. The test point's score is then compared
//! against a quantile in which training score `i` carries probability
//!
//! ```text
//! p_i = sum_{sigma: sigma(n+1) = i} prod_j w_j(z_sigma(j))
//!       / sum_sigma prod_j w_j(z_sigma(j))
//! ```
//!
//! Computing these requires summing over all `(n+1)!` permutations, so it is
//! only offered for `n + 1 <= 10`. When `w_1 = .. = w_n = 1` (covariate
//! shift) the sums collapse to `p_i = w(x_i) / sum_j w(x_j)`; that shortcut
//! is what [`crate::conformal`] uses, and this module is its oracle.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::conformal::{accepts_scores, GridSet, YGrid};
use crate::data::Dataset;
use crate::error::{ConformalError, Result};
use crate::scores::ScoreFn;
use crate::shiftweights::{checked_weight, oracle_tilt_weight, WeightFn};
use crate::wquantile::{compensated_sum, CompensatedSum, WeightedDiscreteDist};

/// Largest `n + 1` for which permutations are enumerated.
pub const ENUMERATION_CAP: usize = 10;

/// Weight function on a sample point `(x, y)`.
pub type PointWeight = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Weight functions `w_1..w_{n+1}`, one per sample position.
#[derive(Clone)]
pub struct WeightFnFamily {
    fns: Vec<PointWeight>,
    /// Set when `w_1..w_n == 1` and `w_{n+1}(x, y) = w(x)`.
    covariate_shift: Option<WeightFn>,
}

impl fmt::Debug for WeightFnFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFnFamily")
            .field("len", &self.fns.len())
            .field("covariate_shift", &self.covariate_shift)
            .finish()
    }
}

impl WeightFnFamily {
    pub fn new(fns: Vec<PointWeight>) -> Self {
        Self {
            fns,
            covariate_shift: None,
        }
    }

    pub fn all_ones(size: usize) -> Self {
        Self::covariate_shift(size, WeightFn::Constant(1.0))
    }

    /// Unit weights on the first `size - 1` positions and `w(x)` on the last.
    pub fn covariate_shift(size: usize, w: WeightFn) -> Self {
        let mut fns: Vec<PointWeight> = (1..size)
            .map(|_| Arc::new(|_: &[f64], _: f64| 1.0) as PointWeight)
            .collect();
        let last = w.clone();
        fns.push(Arc::new(move |x: &[f64], _: f64| last.eval(x)));
        Self {
            fns,
            covariate_shift: Some(w),
        }
    }

    /// `w_j(x, y) = exp(x^T beta_j)`.
    pub fn exponential_tilts(betas: &[Vec<f64>]) -> Self {
        let size = betas.len();
        let untilted = betas[..size.saturating_sub(1)]
            .iter()
            .all(|b| b.iter().all(|v| *v == 0.0));
        if size > 0 && untilted {
            return Self::covariate_shift(size, WeightFn::OracleTilt(betas[size - 1].clone()));
        }
        let fns = betas
            .iter()
            .map(|b| {
                let b = b.clone();
                Arc::new(move |x: &[f64], _: f64| oracle_tilt_weight(x, &b).value) as PointWeight
            })
            .collect();
        Self::new(fns)
    }

    pub fn len(&self) -> usize {
        self.fns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }

    pub fn weight(&self, j: usize, x: &[f64], y: f64) -> f64 {
        (self.fns[j])(x, y)
    }

    pub fn covariate_shift_weight(&self) -> Option<&WeightFn> {
        self.covariate_shift.as_ref()
    }

    /// Placement probabilities, through the closed form when the family is a
    /// covariate-shift family and by enumeration otherwise.
    pub fn probabilities(&self, points: &Dataset) -> Result<PlacementProbs> {
        match &self.covariate_shift {
            Some(w) => {
                check_family_size(points, self)?;
                let weights = w.eval_rows(points.x())?;
                let (train, test) = weights.split_at(weights.len() - 1);
                covariate_shift_probs(train, test[0])
            }
            None => placement_probs(points, self),
        }
    }
}

/// Probability vector `p_1..p_{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProbs(Vec<f64>);

impl PlacementProbs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Training probabilities `p_1..p_n` and the test probability `p_{n+1}`.
    pub fn split_last(&self) -> (&[f64], f64) {
        let (train, test) = self.0.split_at(self.0.len() - 1);
        (train, test[0])
    }
}

/// `p_i = w(X_i) / (sum_j w(X_j) + w(x))`, `p_{n+1} = w(x) / (..)`.
pub fn covariate_shift_probs(train_weights: &[f64], test_weight: f64) -> Result<PlacementProbs> {
    let all: Vec<f64> = train_weights
        .iter()
        .chain(std::iter::once(&test_weight))
        .map(|&w| checked_weight(w))
        .collect::<Result<_>>()?;
    let total = compensated_sum(all.iter().copied());
    if total == 0.0 {
        return Err(ConformalError::ZeroWeights);
    }
    Ok(PlacementProbs(all.into_iter().map(|w| w / total).collect()))
}

fn check_family_size(points: &Dataset, fam: &WeightFnFamily) -> Result<()> {
    if points.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    if points.len() != fam.len() {
        return Err(ConformalError::InvalidInput(format!(
            "{} points but {} weight functions",
            points.len(),
            fam.len()
        )));
    }
    Ok(())
}

/// Exact placement probabilities by enumerating all `(n+1)!` permutations.
///
/// Each row `w_j(z_1..z_{n+1})` is divided by the geometric mean of its
/// positive entries first; that multiplies every permutation product by the
/// same constant and keeps the products near one.
pub fn placement_probs(points: &Dataset, fam: &WeightFnFamily) -> Result<PlacementProbs> {
    check_family_size(points, fam)?;
    let size = points.len();
    if size > ENUMERATION_CAP {
        return Err(ConformalError::EnumerationCap {
            size,
            cap: ENUMERATION_CAP,
        });
    }

    // matrix[j][k] = w_j(z_k)
    let mut matrix = vec![0.0; size * size];
    for j in 0..size {
        for k in 0..size {
            let (x, y) = points.row(k);
            matrix[j * size + k] = checked_weight(fam.weight(j, x, y))?;
        }
        let row = &mut matrix[j * size..(j + 1) * size];
        let positive: Vec<f64> = row.iter().copied().filter(|w| *w > 0.0).collect();
        if positive.is_empty() {
            return Err(ConformalError::ZeroWeights);
        }
        let log_mean = positive.iter().map(|w| w.ln()).sum::<f64>() / positive.len() as f64;
        let g = log_mean.exp();
        row.iter_mut().for_each(|w| *w /= g);
    }

    let n = size - 1;
    let numerators: Vec<f64> = (0..size)
        .into_par_iter()
        .map(|i| {
            let last = matrix[n * size + i];
            if last == 0.0 {
                return 0.0;
            }
            let cols: Vec<usize> = (0..size).filter(|&k| k != i).collect();
            last * permanent(&matrix, size, n, &cols)
        })
        .collect();
    let denominator = compensated_sum(numerators.iter().copied());
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(ConformalError::ZeroWeights);
    }
    Ok(PlacementProbs(
        numerators.into_iter().map(|v| v / denominator).collect(),
    ))
}

/// Permanent of rows `0..rows` restricted to `cols`, by depth-first
/// enumeration of the assignments.
fn permanent(matrix: &[f64], stride: usize, rows: usize, cols: &[usize]) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        matrix: &[f64],
        stride: usize,
        row: usize,
        rows: usize,
        cols: &[usize],
        used: &mut [bool],
        product: f64,
        acc: &mut CompensatedSum,
    ) {
        if row == rows {
            acc.add(product);
            return;
        }
        for (slot, &c) in cols.iter().enumerate() {
            if used[slot] {
                continue;
            }
            let w = matrix[row * stride + c];
            if w == 0.0 {
                continue;
            }
            used[slot] = true;
            walk(matrix, stride, row + 1, rows, cols, used, product * w, acc);
            used[slot] = false;
        }
    }
    let mut acc = CompensatedSum::default();
    let mut used = vec![false; cols.len()];
    walk(matrix, stride, 0, rows, cols, &mut used, 1.0, &mut acc);
    acc.value()
}

/// Weighted conformal band for general weighted exchangeable data.
pub fn general_weighted_band(
    train: &Dataset,
    x: &[f64],
    grid: &YGrid,
    score: &ScoreFn,
    alpha: f64,
    fam: &WeightFnFamily,
) -> Result<GridSet> {
    let accepted = grid
        .points()
        .map(|y| general_weighted_accepts(train, x, y, score, alpha, fam))
        .collect::<Result<Vec<bool>>>()?;
    GridSet::from_accepted(*grid, accepted)
}

pub fn general_weighted_accepts(
    train: &Dataset,
    x: &[f64],
    y: f64,
    score: &ScoreFn,
    alpha: f64,
    fam: &WeightFnFamily,
) -> Result<bool> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidLevel(alpha));
    }
    let points = train.with_point(x, y)?;
    let p = placement_probs(&points, fam)?;
    let (train_p, test_p) = p.split_last();
    let v = score.augmented_scores(train, x, y)?;
    accepts_scores(&v, train_p, test_p, alpha)
}

/// Source of weighted exchangeable samples `Z_1..Z_{n+1}` with a known
/// weight family.
pub trait WeightedExchangeableSampler {
    fn size(&self) -> usize;
    fn family(&self) -> WeightFnFamily;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset;
}

/// Independent draws with `X_j ~ N(beta_j, I)` (the exponential tilt of
/// `N(0, I)` by `exp(x^T beta_j)`) and a heteroskedastic linear response.
#[derive(Debug, Clone)]
pub struct IndependentTiltSampler {
    betas: Vec<Vec<f64>>,
    noise: f64,
}

impl IndependentTiltSampler {
    pub fn new(betas: Vec<Vec<f64>>, noise: f64) -> Result<Self> {
        let d = betas.first().map(Vec::len).unwrap_or(0);
        if betas.len() < 2 || d == 0 || betas.iter().any(|b| b.len() != d) {
            return Err(ConformalError::InvalidInput(
                "need at least two tilt vectors of one common nonzero length".into(),
            ));
        }
        Ok(Self { betas, noise })
    }

    /// `size - 1` untilted points and one test point tilted by `beta`.
    pub fn covariate_shift(size: usize, beta: Vec<f64>, noise: f64) -> Result<Self> {
        let zero = vec![0.0; beta.len()];
        let mut betas = vec![zero; size.saturating_sub(1)];
        betas.push(beta);
        Self::new(betas, noise)
    }
}

impl WeightedExchangeableSampler for IndependentTiltSampler {
    fn size(&self) -> usize {
        self.betas.len()
    }

    fn family(&self) -> WeightFnFamily {
        WeightFnFamily::exponential_tilts(&self.betas)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        let d = self.betas[0].len();
        let mut x = Vec::with_capacity(self.betas.len() * d);
        let mut y = Vec::with_capacity(self.betas.len());
        for beta in &self.betas {
            let row: Vec<f64> = beta
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(rng);
                    b + z
                })
                .collect();
            let eps: f64 = StandardNormal.sample(rng);
            y.push(row.iter().sum::<f64>() + self.noise * (1.0 + row[0].abs()) * eps);
            x.extend(row);
        }
        Dataset::new(crate::data::Covariates::new(x, d).expect("width is d"), y)
            .expect("rows match responses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub reps: usize,
    /// Replicates whose quantile was `+inf`.
    pub infinite: usize,
}

/// Monte Carlo estimate of
/// `P{V_{n+1} <= Quantile(beta; sum_i p_i delta_{V_i} + p_{n+1} delta_inf)}`
/// with `V_i = S(Z_i, Z_{1:(n+1)})`.
pub fn lemma3_coverage_check<S, R>(
    fam: &WeightFnFamily,
    sampler: &S,
    score: &ScoreFn,
    beta: f64,
    reps: usize,
    rng: &mut R,
) -> Result<CoverageEstimate>
where
    S: WeightedExchangeableSampler,
    R: Rng + ?Sized,
{
    if reps < 1000 {
        return Err(ConformalError::InvalidInput(format!(
            "{reps} replicates are too few; use at least 1000"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ConformalError::InvalidLevel(beta));
    }
    if fam.len() != sampler.size() {
        return Err(ConformalError::InvalidInput(format!(
            "family has {} functions, sampler draws {} points",
            fam.len(),
            sampler.size()
        )));
    }
    let mut hits = 0usize;
    let mut infinite = 0usize;
    for _ in 0..reps {
        let points = sampler.sample(rng);
        let n = points.len() - 1;
        let train = points.select(&(0..n).collect::<Vec<_>>());
        let (x, y) = points.row(n);
        let v = score.augmented_scores(&train, x, y)?;
        let p = fam.probabilities(&points)?;
        let (train_p, test_p) = p.split_last();
        let q = WeightedDiscreteDist::with_inf_atom(&v[..n], train_p, test_p)?.quantile(beta)?;
        if q.is_infinite() {
            infinite += 1;
        }
        if v[n] <= q {
            hits += 1;
        }
    }
    let estimate = hits as f64 / reps as f64;
    Ok(CoverageEstimate {
        estimate,
        stderr: (estimate * (1.0 - estimate) / reps as f64).sqrt(),
        reps,
        infinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn points(values: &[f64]) -> Dataset {
        let rows: Vec<[f64; 1]> = values.iter().map(|v| [*v]).collect();
        Dataset::from_rows(&rows, values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_family_is_uniform() {
        let p = placement_probs(&points(&[0.3, 1.0, -2.0, 5.0]), &WeightFnFamily::new(
            (0..4).map(|_| Arc::new(|_: &[f64], _: f64| 1.0) as PointWeight).collect(),
        ))
        .unwrap();
        for v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_point_example() {
        let fam = WeightFnFamily::new(vec![
            Arc::new(|_: &[f64], _: f64| 1.0),
            Arc::new(|_: &[f64], y: f64| y),
        ]);
        let p = placement_probs(&points(&[1.0, 3.0]), &fam).unwrap();
        assert!((p.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn covariate_shift_family_matches_closed_form() {
        let w = WeightFn::OracleTilt(vec![0.7]);
        let pts = points(&[0.1, -1.3, 2.2, 0.8, 1.5]);
        let fam = WeightFnFamily::covariate_shift(5, w.clone());
        let enumerated = placement_probs(&pts, &fam).unwrap();
        let weights = w.eval_rows(pts.x()).unwrap();
        let closed = covariate_shift_probs(&weights[..4], weights[4]).unwrap();
        for (a, b) in enumerated.as_slice().iter().zip(closed.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(fam.probabilities(&pts).unwrap(), closed);
    }

    #[test]
    fn cap_and_zero_errors() {
        let pts = points(&(0..11).map(|v| v as f64).collect::<Vec<_>>());
        assert!(matches!(
            placement_probs(&pts, &WeightFnFamily::all_ones(11)),
            Err(ConformalError::EnumerationCap { size: 11, cap: 10 })
        ));
        let zero = WeightFnFamily::covariate_shift(3, WeightFn::Constant(0.0));
        assert!(matches!(
            placement_probs(&points(&[1.0, 2.0, 3.0]), &zero),
            Err(ConformalError::ZeroWeights)
        ));
        assert!(placement_probs(&points(&[1.0, 2.0]), &WeightFnFamily::all_ones(3)).is_err());
    }

    #[test]
    fn scaling_one_function_changes_nothing() {
        let base = WeightFnFamily::new(vec![
            Arc::new(|x: &[f64], _: f64| 1.0 + x[0].abs()),
            Arc::new(|x: &[f64], _: f64| (0.3 * x[0]).exp()),
            Arc::new(|_: &[f64], y: f64| 1.0 + y * y),
        ]);
        let scaled = WeightFnFamily::new(vec![
            Arc::new(|x: &[f64], _: f64| 1.0 + x[0].abs()),
            Arc::new(|x: &[f64], _: f64| 1e5 * (0.3 * x[0]).exp()),
            Arc::new(|_: &[f64], y: f64| 1.0 + y * y),
        ]);
        let pts = points(&[0.5, -1.0, 2.0]);
        let a = placement_probs(&pts, &base).unwrap();
        let b = placement_probs(&pts, &scaled).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuting_training_points_permutes_probabilities() {
        // Only the last function is non-constant, so w_1..w_n are symmetric
        // in position and the training entries follow their points.
        let fam = WeightFnFamily::new(vec![
            Arc::new(|_: &[f64], _: f64| 2.0),
            Arc::new(|_: &[f64], _: f64| 2.0),
            Arc::new(|_: &[f64], _: f64| 2.0),
            Arc::new(|x: &[f64], y: f64| (x[0] + 0.1 * y).exp()),
        ]);
        let pts = points(&[0.2, 1.1, -0.4, 0.9]);
        let p = placement_probs(&pts, &fam).unwrap();
        let perm = [2usize, 0, 1];
        let reordered = pts.select(&[2, 0, 1, 3]);
        let q = placement_probs(&reordered, &fam).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            assert!((q.as_slice()[slot] - p.as_slice()[src]).abs() < 1e-12);
        }
        assert!((q.as_slice()[3] - p.as_slice()[3]).abs() < 1e-12);
    }

    #[test]
    fn dominant_test_weight_gives_vacuous_quantiles() {
        let sampler = IndependentTiltSampler::covariate_shift(6, vec![4.0], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = lemma3_coverage_check(
            &sampler.family(),
            &sampler,
            &ScoreFn::refit_least_squares(),
            0.9,
            2000,
            &mut rng,
        )
        .unwrap();
        assert!(est.estimate >= 0.9 - 3.0 * est.stderr);
        assert!(est.infinite * 2 > est.reps);
    }

    #[test]
    fn too_few_replicates() {
        let sampler = IndependentTiltSampler::covariate_shift(4, vec![0.5], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(lemma3_coverage_check(
            &sampler.family(),
            &sampler,
            &ScoreFn::refit_least_squares(),
            0.9,
            999,
            &mut rng
        )
        .is_err());
    }
}
