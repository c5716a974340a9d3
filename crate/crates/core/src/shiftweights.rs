//! Likelihood-ratio weights for covariate shift.
//!
//! Three sources of weights are supported: the exponential tilt
//! `w(x) = exp(x^T beta)` when the shift is known, the conditional odds of a
//! probabilistic classifier trained to tell training covariates (class 0)
//! from test covariates (class 1), and kernel localizers (see
//! [`crate::localcov`]). Only proportionality matters downstream, so the
//! class-prior ratio is never divided out of the odds.

use std::fmt;
use std::sync::Arc;

use crate::data::Covariates;
use crate::error::{ConformalError, Result};
use crate::linalg;
use crate::localcov::Kernel;
use crate::wquantile::compensated_sum;

/// Exponent bound for the tilt; `exp(700)` is still finite.
pub const TILT_EXPONENT_LIMIT: f64 = 700.0;

/// Anything that outputs `P(C = 1 | X = x)`.
pub trait ProbabilisticClassifier: Send + Sync {
    fn probability(&self, x: &[f64]) -> f64;
}

pub type CovariateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Covariate-to-weight map `w(x) >= 0`.
#[derive(Clone)]
pub enum WeightFn {
    Constant(f64),
    /// `exp(x^T beta)`.
    OracleTilt(Vec<f64>),
    /// Clipped odds `p / (1 - p)` of a classifier's test-class probability.
    EstimatedOdds {
        classifier: Arc<dyn ProbabilisticClassifier>,
        clip: Clip,
    },
    /// `K((x - center) / h)`.
    KernelLocal { kernel: Kernel, center: Vec<f64> },
    Custom(CovariateFn),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            WeightFn::OracleTilt(b) => f.debug_tuple("OracleTilt").field(b).finish(),
            WeightFn::EstimatedOdds { clip, .. } => f
                .debug_struct("EstimatedOdds")
                .field("clip", clip)
                .finish_non_exhaustive(),
            WeightFn::KernelLocal { kernel, center } => f
                .debug_struct("KernelLocal")
                .field("kernel", kernel)
                .field("center", center)
                .finish(),
            WeightFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl WeightFn {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        WeightFn::Custom(Arc::new(f))
    }

    pub fn estimated(classifier: LogisticClassifier, clip: Clip) -> Self {
        WeightFn::EstimatedOdds {
            classifier: Arc::new(classifier),
            clip,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            WeightFn::Constant(c) => *c,
            WeightFn::OracleTilt(beta) => oracle_tilt_weight(x, beta).value,
            WeightFn::EstimatedOdds { classifier, clip } => {
                clip.odds(classifier.probability(x))
            }
            WeightFn::KernelLocal { kernel, center } => kernel.weight(x, center),
            WeightFn::Custom(f) => f(x),
        }
    }

    /// Evaluates `w` on every row, rejecting negative or non-finite values.
    pub fn eval_rows(&self, x: &Covariates) -> Result<Vec<f64>> {
        x.rows().map(|r| checked_weight(self.eval(r))).collect()
    }
}

pub(crate) fn checked_weight(w: f64) -> Result<f64> {
    if w.is_nan() || w < 0.0 {
        Err(ConformalError::InvalidInput(format!(
            "weight {w} is not a nonnegative number"
        )))
    } else if w.is_infinite() {
        Err(ConformalError::NonFiniteWeight(w))
    } else {
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltWeight {
    pub value: f64,
    /// Set when `x^T beta` was outside `[-700, 700]` and got clamped.
    pub clamped: bool,
}

pub fn oracle_tilt_weight(x: &[f64], beta: &[f64]) -> TiltWeight {
    debug_assert_eq!(x.len(), beta.len());
    let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    let clamped = !(eta.abs() <= TILT_EXPONENT_LIMIT);
    let eta = if eta.is_nan() {
        0.0
    } else {
        eta.clamp(-TILT_EXPONENT_LIMIT, TILT_EXPONENT_LIMIT)
    };
    TiltWeight {
        value: eta.exp(),
        clamped,
    }
}

/// Bounds applied to an estimated probability before taking odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip {
    lo: f64,
    hi: f64,
}

impl Default for Clip {
    fn default() -> Self {
        Self { lo: 0.01, hi: 0.99 }
    }
}

impl Clip {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if 0.0 < lo && lo < hi && hi < 1.0 {
            Ok(Self { lo, hi })
        } else {
            Err(ConformalError::InvalidInput(format!(
                "clip bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
            )))
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// `p / (1 - p)` after clamping `p` into `[lo, hi]`.
    pub fn odds(&self, p: f64) -> f64 {
        let p = if p.is_nan() { 0.5 } else { p.clamp(self.lo, self.hi) };
        p / (1.0 - p)
    }
}

pub fn estimated_weight<C: ProbabilisticClassifier + ?Sized>(
    clf: &C,
    x: &[f64],
    clip: Clip,
) -> f64 {
    clip.odds(clf.probability(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// L2 penalty on the slopes; the intercept is unpenalized.
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Fitted logistic model for `P(C = 1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    coefficients: Vec<f64>,
    iterations: usize,
    converged: bool,
    separable: bool,
}

impl LogisticClassifier {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// The fitted linear predictor splits the two classes perfectly.
    pub fn separable(&self) -> bool {
        self.separable
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

impl ProbabilisticClassifier for LogisticClassifier {
    fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

/// Logistic function kept strictly inside (0, 1).
fn sigmoid(eta: f64) -> f64 {
    // 1 / (1 + e^-36) is the largest value still below 1.0 in f64.
    let eta = eta.clamp(-700.0, 36.0);
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub fn fit_logistic(class0: &Covariates, class1: &Covariates) -> Result<LogisticClassifier> {
    fit_logistic_with(class0, class1, LogisticOptions::default())
}

/// Ridge-penalized logistic regression of class 1 vs class 0 by Newton's
/// method (IRLS) with step halving on the penalized objective.
pub fn fit_logistic_with(
    class0: &Covariates,
    class1: &Covariates,
    opts: LogisticOptions,
) -> Result<LogisticClassifier> {
    if class0.is_empty() || class1.is_empty() {
        return Err(ConformalError::InvalidInput(
            "both classes need at least one row".into(),
        ));
    }
    if class0.dim() != class1.dim() {
        return Err(ConformalError::InvalidInput(format!(
            "class dimensions differ: {} vs {}",
            class0.dim(),
            class1.dim()
        )));
    }
    let p = class0.dim() + 1;
    let rows: Vec<(&[f64], f64)> = class0
        .rows()
        .map(|r| (r, 0.0))
        .chain(class1.rows().map(|r| (r, 1.0)))
        .collect();
    let eta_of = |beta: &[f64], x: &[f64]| -> f64 {
        beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    };
    let objective = |beta: &[f64]| -> f64 {
        let nll: f64 = rows
            .iter()
            .map(|&(x, c)| {
                let eta = eta_of(beta, x);
                softplus(eta) - c * eta
            })
            .sum();
        nll + 0.5 * opts.lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
    };

    let mut beta = vec![0.0; p];
    let mut current = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut hess = vec![0.0; p * p];
        let mut grad = vec![0.0; p];
        let mut z = vec![0.0; p];
        for &(x, c) in &rows {
            let prob = sigmoid(eta_of(&beta, x));
            let w = prob * (1.0 - prob);
            z[0] = 1.0;
            z[1..].copy_from_slice(x);
            for j in 0..p {
                grad[j] += (c - prob) * z[j];
                for k in 0..=j {
                    hess[j * p + k] += w * z[j] * z[k];
                }
            }
        }
        for j in 1..p {
            grad[j] -= opts.lambda * beta[j];
            hess[j * p + j] += opts.lambda;
        }
        for j in 0..p {
            for k in 0..j {
                hess[k * p + j] = hess[j * p + k];
            }
        }
        let step = match linalg::cholesky_solve(&hess, p, &grad) {
            Some(s) => s,
            None => {
                linalg::add_trace_scaled_ridge(&mut hess, p, linalg::RIDGE_FALLBACK);
                linalg::cholesky_solve(&hess, p, &grad).ok_or_else(|| {
                    ConformalError::InvalidInput("logistic Hessian is singular".into())
                })?
            }
        };

        let mut t = 1.0;
        let mut candidate: Vec<f64>;
        let mut value;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            value = objective(&candidate);
            if value <= current || halvings >= 30 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let change = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
        if value <= current {
            beta = candidate;
            current = value;
        }
        if change < opts.tolerance || halvings >= 30 {
            converged = change < opts.tolerance;
            break;
        }
    }

    let separable = rows.iter().all(|&(x, c)| {
        let eta = eta_of(&beta, x);
        if c == 1.0 {
            eta > 0.0
        } else {
            eta < 0.0
        }
    });
    Ok(LogisticClassifier {
        coefficients: beta,
        iterations,
        converged,
        separable,
    })
}

/// `(sum |w_i|)^2 / sum w_i^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(ConformalError::InvalidInput(
            "weights must be finite and nonnegative".into(),
        ));
    }
    // Rescale by the largest weight so the squares cannot overflow.
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(ConformalError::ZeroWeights);
    }
    let l1 = compensated_sum(weights.iter().map(|w| w / max));
    let l2 = compensated_sum(weights.iter().map(|w| (w / max).powi(2)));
    Ok(l1 * l1 / l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    struct Fixed(f64);
    impl ProbabilisticClassifier for Fixed {
        fn probability(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    #[test]
    fn tilt_examples() {
        assert_eq!(oracle_tilt_weight(&[0.0; 5], &[3.0, -2.0, 1.0, 0.5, 9.0]).value, 1.0);
        let w = oracle_tilt_weight(&[1.0, 0.3, -7.0, 2.0, 1.0], &[-1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(w.value, 1.0);
        assert!(!w.clamped);
        assert_eq!(oracle_tilt_weight(&[4.0, -2.0], &[0.0, 0.0]).value, 1.0);
        let big = oracle_tilt_weight(&[1000.0], &[1.0]);
        assert!(big.clamped && big.value.is_finite());
        assert_eq!(big.value, 700f64.exp());
    }

    #[test]
    fn odds_examples() {
        let clip = Clip::default();
        assert_eq!(estimated_weight(&Fixed(0.5), &[0.0], clip), 1.0);
        let w = estimated_weight(&Fixed(0.999), &[0.0], clip);
        assert!((w - 99.0).abs() < 1e-9);
        assert!((estimated_weight(&Fixed(0.2), &[0.0], clip) - 0.25).abs() < 1e-15);
        let lo = estimated_weight(&Fixed(0.0), &[0.0], clip);
        assert!((lo - 1.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn clip_validation() {
        assert!(Clip::new(0.5, 0.5).is_err());
        assert!(Clip::new(0.0, 0.9).is_err());
        assert!(Clip::new(0.1, 1.0).is_err());
        assert!(Clip::new(0.05, 0.95).is_ok());
    }

    #[test]
    fn odds_strictly_increasing_on_clip_range() {
        let clip = Clip::default();
        let mut prev = clip.odds(0.01);
        for k in 1..=980 {
            let p = 0.01 + k as f64 * 0.001;
            let cur = clip.odds(p);
            assert!(cur > prev, "p={p}");
            prev = cur;
        }
    }

    #[test]
    fn ess_examples() {
        assert_eq!(effective_sample_size(&[1.0; 4]).unwrap(), 4.0);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((effective_sample_size(&[2.0, 1.0]).unwrap() - 1.8).abs() < 1e-15);
        assert!(matches!(
            effective_sample_size(&[0.0, 0.0]),
            Err(ConformalError::ZeroWeights)
        ));
        assert!(effective_sample_size(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn symmetric_classes_give_zero_intercept() {
        let c0 = Covariates::new(vec![-1.0; 10], 1).unwrap();
        let c1 = Covariates::new(vec![1.0; 10], 1).unwrap();
        let clf = fit_logistic(&c0, &c1).unwrap();
        assert!(clf.intercept().abs() < 1e-8);
        assert!(clf.separable());
        let w = WeightFn::estimated(clf, Clip::default());
        for x in [-100.0, -1.0, 0.0, 1.0, 100.0] {
            let v = w.eval(&[x]);
            assert!(v.is_finite() && (1.0 / 99.0 - 1e-12..=99.0 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn overlapping_classes_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draw = |n: usize, shift: f64, rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..n * 2)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z + shift
                })
                .collect();
            Covariates::new(v, 2).unwrap()
        };
        let c0 = draw(300, 0.0, &mut rng);
        let c1 = draw(300, 0.5, &mut rng);
        let clf = fit_logistic(&c0, &c1).unwrap();
        assert!(clf.converged());
        assert!(!clf.separable());
        assert!(clf.iterations() < 20);
    }

    #[test]
    fn one_empty_class_is_rejected() {
        let c0 = Covariates::new(vec![1.0], 1).unwrap();
        let c1 = Covariates::new(vec![], 1).unwrap();
        assert!(fit_logistic(&c0, &c1).is_err());
    }

    #[test]
    fn weight_fn_rejects_bad_values() {
        let rows = Covariates::new(vec![0.0, 1.0], 1).unwrap();
        assert!(WeightFn::custom(|_| -1.0).eval_rows(&rows).is_err());
        assert!(matches!(
            WeightFn::custom(|_| f64::INFINITY).eval_rows(&rows),
            Err(ConformalError::NonFiniteWeight(_))
        ));
    }

    proptest! {
        #[test]
        fn ess_scale_invariant(w in prop::collection::vec(0.0f64..100.0, 1..60), c in 1e-4f64..1e4) {
            prop_assume!(w.iter().any(|v| *v > 0.0));
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let a = effective_sample_size(&w).unwrap();
            let b = effective_sample_size(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }
    }
}
