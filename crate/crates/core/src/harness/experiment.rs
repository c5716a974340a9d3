//! Repeated random-split experiment.
//!
//! Each trial partitions the data into `D_pre` (fits `mu0`), `D_train`
//! (calibration residuals) and `D_test`, then draws `D_shift` from `D_test`
//! with replacement and probabilities proportional to `exp(x^T beta)`.
//! Split conformal intervals are scored on the test sets for each requested
//! weighting method.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthetic::HeteroskedasticModel;
use crate::conformal::SplitCalibration;
use crate::data::Dataset;
use crate::error::{ConformalError, Result};
use crate::scores::{fit_linear, LinearRegressor};
use crate::shiftweights::{effective_sample_size, fit_logistic, Clip, WeightFn};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CONFORMAL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Ordinary split conformal, scored on both `D_test` and `D_shift`.
    None,
    /// Oracle tilt weights, scored on `D_shift`.
    Oracle,
    /// Logistic-regression odds weights: `D_train` vs `D_shift` scored on
    /// `D_shift`, and `D_train` vs `D_test` scored on `D_test`.
    Logistic,
    /// Unweighted split conformal on `D_test` calibrated with
    /// `floor(ESS)` subsampled training points.
    Ess,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Oracle, Method::Logistic, Method::Ess];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Oracle => "oracle",
            Method::Logistic => "logistic",
            Method::Ess => "ess",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Method::None),
            "oracle" => Ok(Method::Oracle),
            "logistic" => Ok(Method::Logistic),
            "ess" => Ok(Method::Ess),
            other => Err(ConformalError::InvalidInput(format!(
                "unknown method '{other}' (expected none, oracle, logistic or ess)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestSet {
    Test,
    Shift,
}

impl TestSet {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestSet::Test => "test",
            TestSet::Shift => "shift",
        }
    }
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestSet {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(TestSet::Test),
            "shift" => Ok(TestSet::Shift),
            other => Err(ConformalError::InvalidInput(format!("unknown test set '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub pre: f64,
    pub train: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            pre: 0.25,
            train: 0.25,
            test: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub alpha: f64,
    pub fractions: SplitFractions,
    /// Size of `D_shift` as a fraction of the whole dataset.
    pub shift_fraction: f64,
    pub tilt: Vec<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 5000,
            alpha: 0.1,
            fractions: SplitFractions::default(),
            shift_fraction: 0.25,
            tilt: vec![-1.0, 0.0, 0.0, 0.0, 1.0],
            methods: Method::ALL.to_vec(),
            seed: 7,
            clip_lo: 0.01,
            clip_hi: 0.99,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.fractions;
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(in_unit(f.pre) && in_unit(f.train) && in_unit(f.test)) {
            return Err(ConformalError::InvalidInput(
                "split fractions must lie in (0, 1)".into(),
            ));
        }
        if (f.pre + f.train + f.test - 1.0).abs() > 1e-9 {
            return Err(ConformalError::InvalidInput(format!(
                "split fractions sum to {}, not 1",
                f.pre + f.train + f.test
            )));
        }
        if !in_unit(self.shift_fraction) && self.shift_fraction != 1.0 {
            return Err(ConformalError::InvalidInput(
                "shift fraction must lie in (0, 1]".into(),
            ));
        }
        if self.trials == 0 {
            return Err(ConformalError::InvalidInput("trials must be at least 1".into()));
        }
        if !in_unit(self.alpha) {
            return Err(ConformalError::InvalidLevel(self.alpha));
        }
        if self.methods.is_empty() {
            return Err(ConformalError::InvalidInput("no methods requested".into()));
        }
        Clip::new(self.clip_lo, self.clip_hi)?;
        Ok(())
    }

    pub fn clip(&self) -> Clip {
        Clip::new(self.clip_lo, self.clip_hi).unwrap_or_default()
    }
}

/// One method scored on one test set in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub test_set: TestSet,
    /// Fraction of test points inside their interval; infinite intervals
    /// always cover.
    pub coverage: f64,
    /// Median interval length; `+inf` when at least half the intervals are
    /// infinite.
    #[serde(with = "super::report::inf_as_null")]
    pub median_length: f64,
    pub infinite_count: usize,
    pub n_test: usize,
    /// Calibration points used.
    pub n_calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    /// Effective sample size of the oracle weights on `D_train`.
    pub ess: f64,
    pub methods: Vec<MethodReport>,
}

/// Where each trial's data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// A fixed dataset, re-split every trial.
    Fixed(Dataset),
    /// A fresh synthetic pool of `pool_size` rows every trial.
    Synthetic {
        model: HeteroskedasticModel,
        pool_size: usize,
    },
}

/// Scores `cal` intervals on every point of `test`.
pub fn evaluate(
    cal: &SplitCalibration,
    test: &Dataset,
    alpha: f64,
    method: Method,
    test_set: TestSet,
) -> Result<MethodReport> {
    if test.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    let mut covered = 0usize;
    let mut lengths = Vec::with_capacity(test.len());
    for (x, y) in test.iter() {
        let interval = cal.interval(x, alpha)?;
        if interval.contains(y) {
            covered += 1;
        }
        lengths.push(interval.length());
    }
    let infinite_count = lengths.iter().filter(|l| l.is_infinite()).count();
    Ok(MethodReport {
        method,
        test_set,
        coverage: covered as f64 / test.len() as f64,
        median_length: median(&mut lengths),
        infinite_count,
        n_test: test.len(),
        n_calibration: cal.weights().len(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// `count` rows of `test` drawn with replacement, with probability
/// proportional to `w(x)`.
pub fn tilted_subsample<R: Rng + ?Sized>(
    test: &Dataset,
    count: usize,
    w: &WeightFn,
    rng: &mut R,
) -> Result<Dataset> {
    if test.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    if count == 0 {
        return Err(ConformalError::InvalidInput("subsample size must be at least 1".into()));
    }
    let weights = w.eval_rows(test.x())?;
    if weights.iter().all(|&v| v == 0.0) {
        return Err(ConformalError::ZeroWeights);
    }
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| ConformalError::InvalidInput(format!("sampling weights: {e}")))?;
    let idx: Vec<usize> = (0..count).map(|_| dist.sample(rng)).collect();
    Ok(test.select(&idx))
}

/// Unweighted split conformal on `test`, calibrated on `floor(ESS(weights))`
/// points subsampled without replacement from `train`.
pub fn ess_matched_baseline<R: Rng + ?Sized>(
    train: &Dataset,
    weights: &[f64],
    alpha: f64,
    mu0: &LinearRegressor,
    test: &Dataset,
    rng: &mut R,
) -> Result<MethodReport> {
    if weights.len() != train.len() {
        return Err(ConformalError::InvalidInput(format!(
            "{} weights for {} training points",
            weights.len(),
            train.len()
        )));
    }
    let ess = effective_sample_size(weights)?;
    let k = (ess.floor() as usize).clamp(1, train.len());
    let mut idx = index::sample(rng, train.len(), k).into_vec();
    idx.sort_unstable();
    let cal = SplitCalibration::unweighted(&train.select(&idx), mu0)?;
    evaluate(&cal, test, alpha, Method::Ess, TestSet::Test)
}

/// Per-trial RNG: stream `trial` of the ChaCha generator keyed by `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_trial(config: &ExperimentConfig, source: &DataSource, trial: usize) -> Result<TrialReport> {
    let mut rng = trial_rng(config.seed, trial);
    let generated;
    let data = match source {
        DataSource::Fixed(d) => d,
        DataSource::Synthetic { model, pool_size } => {
            generated = model.generate(*pool_size, &mut rng);
            &generated
        }
    };
    let n = data.len();
    if config.tilt.len() != data.dim() {
        return Err(ConformalError::InvalidInput(format!(
            "tilt has {} entries, data has {} covariates",
            config.tilt.len(),
            data.dim()
        )));
    }
    let n_pre = (config.fractions.pre * n as f64).floor() as usize;
    let n_train = (config.fractions.train * n as f64).floor() as usize;
    if n_pre == 0 || n_train == 0 || n_pre + n_train >= n {
        return Err(ConformalError::InvalidInput(format!(
            "{n} rows are too few for the requested split fractions"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let d_pre = data.select(&perm[..n_pre]);
    let d_train = data.select(&perm[n_pre..n_pre + n_train]);
    let d_test = data.select(&perm[n_pre + n_train..]);

    let mu0 = fit_linear(&d_pre)?;
    let oracle = WeightFn::OracleTilt(config.tilt.clone());
    let shift_count = ((config.shift_fraction * n as f64).round() as usize).max(1);
    let d_shift = tilted_subsample(&d_test, shift_count, &oracle, &mut rng)?;
    let oracle_train = oracle.eval_rows(d_train.x())?;
    let ess = effective_sample_size(&oracle_train)?;

    let alpha = config.alpha;
    let mut methods = Vec::new();
    let mut requested = config.methods.clone();
    requested.sort();
    requested.dedup();
    for method in requested {
        match method {
            Method::None => {
                let cal = SplitCalibration::unweighted(&d_train, &mu0)?;
                methods.push(evaluate(&cal, &d_test, alpha, method, TestSet::Test)?);
                methods.push(evaluate(&cal, &d_shift, alpha, method, TestSet::Shift)?);
            }
            Method::Oracle => {
                let cal = SplitCalibration::weighted(&d_train, &mu0, &oracle)?;
                methods.push(evaluate(&cal, &d_shift, alpha, method, TestSet::Shift)?);
            }
            Method::Logistic => {
                for (target, set) in [(&d_test, TestSet::Test), (&d_shift, TestSet::Shift)] {
                    let clf = fit_logistic(d_train.x(), target.x())?;
                    let w = WeightFn::estimated(clf, config.clip());
                    let cal = SplitCalibration::weighted(&d_train, &mu0, &w)?;
                    methods.push(evaluate(&cal, target, alpha, method, set)?);
                }
            }
            Method::Ess => {
                methods.push(ess_matched_baseline(
                    &d_train,
                    &oracle_train,
                    alpha,
                    &mu0,
                    &d_test,
                    &mut rng,
                )?);
            }
        }
    }
    Ok(TrialReport {
        trial,
        ess,
        methods,
    })
}

/// Thread count from `CONFORMAL_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

pub fn run_experiment(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<TrialReport>> {
    run_experiment_on(config, &DataSource::Fixed(data.clone()), threads_from_env())
}

/// Runs every trial, in parallel on up to `threads` workers (all cores when
/// `None`). Output does not depend on the thread count.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    source: &DataSource,
    threads: Option<usize>,
) -> Result<Vec<TrialReport>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| ConformalError::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrialReport>> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(config, source, t))
            .collect()
    });
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| ConformalError::Trial {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            trials: 6,
            tilt: vec![1.0, 0.0],
            ..Default::default()
        }
    }

    fn pool() -> DataSource {
        DataSource::Synthetic {
            model: HeteroskedasticModel::default(),
            pool_size: 200,
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY, 2.0]), 2.0);
        assert!(median(&mut [1.0, f64::INFINITY]).is_infinite());
    }

    #[test]
    fn uniform_subsample_and_degenerate_tilt() {
        let ds = Dataset::from_rows(&[[0.0], [1.0], [2.0]], vec![0.0, 1.0, 2.0]).unwrap();
        let mut rng = trial_rng(1, 0);
        let sub = tilted_subsample(&ds, 3000, &WeightFn::Constant(1.0), &mut rng).unwrap();
        for v in [0.0, 1.0, 2.0] {
            let c = sub.y().iter().filter(|y| **y == v).count();
            assert!((800..1200).contains(&c), "{v}: {c}");
        }
        let only_last = WeightFn::custom(|x| if x[0] == 2.0 { 1.0 } else { 0.0 });
        let sub = tilted_subsample(&ds, 50, &only_last, &mut rng).unwrap();
        assert!(sub.y().iter().all(|y| *y == 2.0));
        assert!(matches!(
            tilted_subsample(&ds, 5, &WeightFn::Constant(0.0), &mut rng),
            Err(ConformalError::ZeroWeights)
        ));
    }

    #[test]
    fn ess_baseline_examples() {
        let mut rng = trial_rng(3, 0);
        let model = HeteroskedasticModel::default();
        let train = model.generate(50, &mut rng);
        let test = model.generate(40, &mut rng);
        let mu0 = fit_linear(&model.generate(30, &mut rng)).unwrap();
        let all = ess_matched_baseline(&train, &[2.0; 50], 0.1, &mu0, &test, &mut rng).unwrap();
        let direct = evaluate(
            &SplitCalibration::unweighted(&train, &mu0).unwrap(),
            &test,
            0.1,
            Method::Ess,
            TestSet::Test,
        )
        .unwrap();
        assert_eq!(all, direct);
        let mut one = vec![0.0; 50];
        one[0] = 1.0;
        let single = ess_matched_baseline(&train, &one, 0.1, &mu0, &test, &mut rng).unwrap();
        assert_eq!(single.n_calibration, 1);
        assert_eq!(single.infinite_count, 40);
        assert_eq!(single.coverage, 1.0);
    }

    #[test]
    fn partitions_follow_fractions() {
        let reports = run_experiment_on(&small_config(), &pool(), Some(2)).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            let none_test = r
                .methods
                .iter()
                .find(|m| m.method == Method::None && m.test_set == TestSet::Test)
                .unwrap();
            assert_eq!(none_test.n_test, 100);
            assert_eq!(none_test.n_calibration, 50);
            let shift = r.methods.iter().find(|m| m.test_set == TestSet::Shift).unwrap();
            assert_eq!(shift.n_test, 50);
            for m in &r.methods {
                assert!((0.0..=1.0).contains(&m.coverage));
                let covered = (m.coverage * m.n_test as f64).round();
                assert_eq!(covered / m.n_test as f64, m.coverage);
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let a = run_experiment_on(&small_config(), &pool(), Some(1)).unwrap();
        let b = run_experiment_on(&small_config(), &pool(), Some(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = small_config();
        c.fractions.test = 0.4;
        assert!(run_experiment_on(&c, &pool(), Some(1)).is_err());
        let mut c = small_config();
        c.tilt = vec![1.0];
        assert!(matches!(
            run_experiment_on(&c, &pool(), Some(1)),
            Err(ConformalError::Trial { index: 0, .. })
        ));
        assert!("bogus".parse::<Method>().is_err());
    }
}
