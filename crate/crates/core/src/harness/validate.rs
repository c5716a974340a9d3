//! Self-check suite behind `conformal validate`: compares the covariate-shift
//! shortcut against exact permutation enumeration and runs Monte Carlo
//! coverage checks of the weighted quantile bound.

use rand::Rng;
use serde::Serialize;

use crate::conformal::{weighted_full_conformal, YGrid};
use crate::data::Dataset;
use crate::error::Result;
use crate::scores::ScoreFn;
use crate::shiftweights::WeightFn;
use crate::wexch::{
    covariate_shift_probs, general_weighted_band, lemma3_coverage_check, placement_probs,
    IndependentTiltSampler, WeightFnFamily, WeightedExchangeableSampler,
};
use crate::wquantile::empirical_quantile_with_inf;

use super::experiment::trial_rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn random_points<R: Rng>(rng: &mut R, n: usize, d: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r.iter().sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    Dataset::from_rows(&rows, y).expect("consistent rows")
}

fn shortcut_agreement(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = trial_rng(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let size = rng.random_range(2..=7);
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let w = WeightFn::OracleTilt(beta);
        let pts = random_points(&mut rng, size, 2);
        let exact = placement_probs(&pts, &WeightFnFamily::covariate_shift(size, w.clone()))?;
        let weights = w.eval_rows(pts.x())?;
        let closed = covariate_shift_probs(&weights[..size - 1], weights[size - 1])?;
        for (a, b) in exact.as_slice().iter().zip(closed.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check {
        name: "placement probabilities equal the covariate-shift closed form".into(),
        passed: worst <= 1e-12,
        detail: format!("{instances} instances, max abs difference {worst:.3e}"),
    })
}

fn band_agreement(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = trial_rng(seed, 1);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=6);
        let train = random_points(&mut rng, n, 1);
        let x = [rng.random_range(-1.5..1.5)];
        let w = WeightFn::OracleTilt(vec![rng.random_range(-1.0..1.0)]);
        let grid = YGrid::spanning(train.y(), 61)?;
        let score = ScoreFn::refit_least_squares();
        let alpha = rng.random_range(0.1..0.5);
        let general = general_weighted_band(
            &train,
            &x,
            &grid,
            &score,
            alpha,
            &WeightFnFamily::covariate_shift(n + 1, w.clone()),
        )?;
        let shortcut = weighted_full_conformal(&train, &x, &grid, &score, alpha, &w)?;
        if general.accepted() != shortcut.accepted() {
            mismatches += 1;
        }
    }
    Ok(Check {
        name: "general weighted band equals weighted full conformal".into(),
        passed: mismatches == 0,
        detail: format!("{instances} instances, {mismatches} mismatches"),
    })
}

fn uniform_quantile_bound(seed: u64, reps: usize) -> Result<Check> {
    let mut rng = trial_rng(seed, 2);
    let n = 19;
    let mut hits = 0;
    let mut v = vec![0.0; n + 1];
    for _ in 0..reps {
        v.iter_mut().for_each(|x| *x = rng.random::<f64>());
        if v[n] <= empirical_quantile_with_inf(0.9, &v[..n])? {
            hits += 1;
        }
    }
    let p = hits as f64 / reps as f64;
    Ok(Check {
        name: "uniform quantile bound 0.90 <= P <= 0.95 (n = 19)".into(),
        passed: (0.89..=0.96).contains(&p),
        detail: format!("{reps} reps, estimate {p:.4}"),
    })
}

fn weighted_bound<S: WeightedExchangeableSampler>(
    name: &str,
    sampler: &S,
    seed: u64,
    stream: usize,
    reps: usize,
) -> Result<Check> {
    let mut rng = trial_rng(seed, stream);
    let est = lemma3_coverage_check(
        &sampler.family(),
        sampler,
        &ScoreFn::refit_least_squares(),
        0.9,
        reps,
        &mut rng,
    )?;
    Ok(Check {
        name: format!("weighted quantile lower bound, {name}"),
        passed: est.estimate >= 0.9 - 3.0 * est.stderr,
        detail: format!(
            "{} reps, estimate {:.4} (stderr {:.4}), {} infinite",
            est.reps, est.estimate, est.stderr, est.infinite
        ),
    })
}

/// Runs every check; `quick` trims replicate counts for smoke testing.
pub fn run_validation(seed: u64, quick: bool) -> Result<Vec<Check>> {
    let scale = if quick { 1 } else { 10 };
    let mut checks = vec![
        shortcut_agreement(seed, 20 * scale)?,
        band_agreement(seed, 2 * scale)?,
        uniform_quantile_bound(seed, 10_000 * scale)?,
    ];
    let shift = IndependentTiltSampler::covariate_shift(10, vec![1.0, -0.5], 0.5)?;
    checks.push(weighted_bound("covariate-shift tilt", &shift, seed, 3, 2000 * scale)?);
    let general = IndependentTiltSampler::new(
        vec![
            vec![0.0, 0.5],
            vec![0.5, 0.0],
            vec![-0.5, 0.0],
            vec![0.0, -0.5],
            vec![1.0, 1.0],
        ],
        0.5,
    )?;
    checks.push(weighted_bound("per-point tilts", &general, seed, 4, 1000 * scale)?);
    let dominant = IndependentTiltSampler::covariate_shift(6, vec![4.0, 0.0], 0.5)?;
    checks.push(weighted_bound("dominant test weight", &dominant, seed, 5, 1000 * scale)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let checks = run_validation(1, true).unwrap();
        assert_eq!(checks.len(), 6);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
