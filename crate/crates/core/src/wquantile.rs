//! Weighted discrete distributions on the extended real line and their
//! lower quantiles.
//!
//! A distribution is a finite set of atoms `(value, mass)` plus at most one
//! atom at `+inf`. Masses need not sum to one: every quantile is taken after
//! dividing by the total mass, so callers can pass raw likelihood-ratio
//! weights directly.

use crate::error::{ConformalError, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in it {
        acc.add(v);
    }
    acc.value()
}

fn check_level(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::InvalidLevel(beta))
    }
}

fn check_mass(mass: f64) -> Result<()> {
    if mass.is_finite() && mass >= 0.0 {
        Ok(())
    } else {
        Err(ConformalError::InvalidDistribution(format!(
            "mass {mass} is not a finite nonnegative number"
        )))
    }
}

/// Multiset of extended-real atoms with nonnegative masses.
///
/// Finite atoms are kept sorted by value (stable with respect to insertion
/// order for ties). Zero-mass atoms are dropped and all `+inf` atoms are
/// merged into one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDiscreteDist {
    values: Vec<f64>,
    masses: Vec<f64>,
    inf_mass: f64,
}

impl WeightedDiscreteDist {
    pub fn new<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut finite = Vec::new();
        let mut inf_mass = 0.0;
        for (value, mass) in atoms {
            check_mass(mass)?;
            if value.is_nan() || value == f64::NEG_INFINITY {
                return Err(ConformalError::InvalidDistribution(format!(
                    "atom value {value} is not in (-inf, +inf]"
                )));
            }
            if mass == 0.0 {
                continue;
            }
            if value == f64::INFINITY {
                inf_mass += mass;
            } else {
                finite.push((value, mass));
            }
        }
        finite.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (values, masses) = finite.into_iter().unzip();
        let dist = Self {
            values,
            masses,
            inf_mass,
        };
        if dist.total_mass() <= 0.0 {
            return Err(ConformalError::InvalidDistribution(
                "total mass must be positive".into(),
            ));
        }
        Ok(dist)
    }

    /// Equal masses on `values` plus one atom of the same mass at `+inf`.
    pub fn uniform_with_inf(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(ConformalError::InvalidInput(
                "need at least one value".into(),
            ));
        }
        Self::new(
            values
                .iter()
                .map(|&v| (v, 1.0))
                .chain(std::iter::once((f64::INFINITY, 1.0))),
        )
    }

    /// Atoms `values[i]` with mass `weights[i]`, plus `inf_mass` at `+inf`.
    pub fn with_inf_atom(values: &[f64], weights: &[f64], inf_mass: f64) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(ConformalError::InvalidInput(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        Self::new(
            values
                .iter()
                .copied()
                .zip(weights.iter().copied())
                .chain(std::iter::once((f64::INFINITY, inf_mass))),
        )
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.masses.iter().copied().chain(std::iter::once(self.inf_mass)))
    }

    pub fn inf_mass(&self) -> f64 {
        self.inf_mass
    }

    /// Finite atoms in ascending value order.
    pub fn finite_atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.masses.iter().copied())
    }

    /// `inf { z : F(z) >= beta }` under the normalized masses.
    pub fn quantile(&self, beta: f64) -> Result<f64> {
        check_level(beta)?;
        Ok(quantile_sorted(beta, &self.values, &self.masses, self.inf_mass))
    }
}

pub fn quantile(beta: f64, dist: &WeightedDiscreteDist) -> Result<f64> {
    dist.quantile(beta)
}

/// Level-`beta` quantile of the empirical distribution of `values` with an
/// extra atom at `+inf`, each of the `n + 1` atoms carrying mass `1/(n+1)`.
pub fn empirical_quantile_with_inf(beta: f64, values: &[f64]) -> Result<f64> {
    WeightedDiscreteDist::uniform_with_inf(values)?.quantile(beta)
}

/// Core scan shared by every quantile in the crate.
///
/// `values` must be sorted ascending and paired with strictly positive
/// masses. Masses are divided by the largest mass first, so equal masses
/// become exactly `1.0` and the cumulative sums stay integral.
pub(crate) fn quantile_sorted(beta: f64, values: &[f64], masses: &[f64], inf_mass: f64) -> f64 {
    debug_assert_eq!(values.len(), masses.len());
    let scale = masses.iter().copied().fold(inf_mass, f64::max);
    let total = compensated_sum(
        masses
            .iter()
            .map(|m| m / scale)
            .chain(std::iter::once(inf_mass / scale)),
    );
    let threshold = beta * total;
    let mut cum = CompensatedSum::default();
    for (&v, &m) in values.iter().zip(masses) {
        cum.add(m / scale);
        if cum.value() >= threshold {
            return v;
        }
    }
    if inf_mass > 0.0 {
        f64::INFINITY
    } else {
        // Only reachable through rounding when beta is within an ulp of one.
        values.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sort-and-cumulate oracle in exact rational arithmetic on integer masses.
    fn oracle(beta_num: u64, beta_den: u64, atoms: &[(f64, u64)]) -> f64 {
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: u64 = sorted.iter().map(|a| a.1).sum();
        let mut cum = 0u64;
        for (v, m) in sorted {
            cum += m;
            // cum / total >= beta_num / beta_den
            if (cum as u128) * (beta_den as u128) >= (beta_num as u128) * (total as u128) {
                return v;
            }
        }
        unreachable!()
    }

    #[test]
    fn median_of_three() {
        let d = WeightedDiscreteDist::new([(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).unwrap();
        assert_eq!(d.quantile(0.5).unwrap(), 2.0);
    }

    #[test]
    fn ten_equal_atoms_with_infinity() {
        let atoms = (1..=9)
            .map(|v| (v as f64, 1.0))
            .chain(std::iter::once((f64::INFINITY, 1.0)));
        let d = WeightedDiscreteDist::new(atoms).unwrap();
        assert_eq!(d.quantile(0.9).unwrap(), 9.0);
    }

    #[test]
    fn infinity_atom_dominates() {
        let d = WeightedDiscreteDist::new([(5.0, 0.05), (f64::INFINITY, 0.95)]).unwrap();
        assert_eq!(d.quantile(0.9).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empirical_with_inf_examples() {
        assert_eq!(
            empirical_quantile_with_inf(0.8, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            4.0
        );
        assert_eq!(
            empirical_quantile_with_inf(0.99, &[1.0]).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            empirical_quantile_with_inf(0.5, &[7.0, 7.0, 7.0]).unwrap(),
            7.0
        );
        assert_eq!(
            empirical_quantile_with_inf(0.75, &[7.0, 7.0, 7.0]).unwrap(),
            7.0
        );
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            WeightedDiscreteDist::new(std::iter::empty()),
            Err(ConformalError::InvalidDistribution(_))
        ));
        assert!(matches!(
            WeightedDiscreteDist::new([(1.0, 0.0), (2.0, 0.0)]),
            Err(ConformalError::InvalidDistribution(_))
        ));
        assert!(WeightedDiscreteDist::new([(1.0, -1.0)]).is_err());
        assert!(WeightedDiscreteDist::new([(f64::NAN, 1.0)]).is_err());
        assert!(WeightedDiscreteDist::new([(f64::NEG_INFINITY, 1.0)]).is_err());
        assert!(matches!(
            empirical_quantile_with_inf(0.5, &[]),
            Err(ConformalError::InvalidInput(_))
        ));
        let d = WeightedDiscreteDist::new([(1.0, 1.0)]).unwrap();
        for beta in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(d.quantile(beta), Err(ConformalError::InvalidLevel(_))));
        }
    }

    #[test]
    fn zero_mass_atoms_are_ignored() {
        let d = WeightedDiscreteDist::new([(0.5, 0.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        assert_eq!(d.quantile(0.01).unwrap(), 1.0);
        assert_eq!(d.finite_atoms().count(), 2);
    }

    #[test]
    fn infinity_atoms_merge() {
        let d = WeightedDiscreteDist::new([
            (1.0, 1.0),
            (f64::INFINITY, 1.0),
            (f64::INFINITY, 2.0),
        ])
        .unwrap();
        assert_eq!(d.inf_mass(), 3.0);
        assert_eq!(d.quantile(0.25).unwrap(), 1.0);
        assert_eq!(d.quantile(0.26).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ceil_rule_for_uniform_masses() {
        // Quantile(beta; V_1..n u {inf}) is the ceil(beta (n+1))-th smallest.
        for n in 1..40usize {
            let values: Vec<f64> = (0..n).map(|i| (n - i) as f64 * 0.37).collect();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            for k in 1..100 {
                let beta = k as f64 / 100.0;
                let rank = (beta * (n + 1) as f64).ceil() as usize;
                let expected = if rank > n { f64::INFINITY } else { sorted[rank - 1] };
                assert_eq!(
                    empirical_quantile_with_inf(beta, &values).unwrap(),
                    expected,
                    "n={n} beta={beta}"
                );
            }
        }
    }

    fn atoms_strategy() -> impl Strategy<Value = Vec<(f64, u64)>> {
        prop::collection::vec(
            (
                prop_oneof![
                    4 => (-50i32..50).prop_map(|v| v as f64 / 4.0),
                    1 => Just(f64::INFINITY),
                ],
                1u64..20,
            ),
            1..=12,
        )
    }

    proptest! {
        #[test]
        fn matches_rational_oracle(atoms in atoms_strategy(), beta_num in 1u64..1000) {
            let beta = beta_num as f64 / 1000.0;
            let d = WeightedDiscreteDist::new(atoms.iter().map(|&(v, m)| (v, m as f64))).unwrap();
            prop_assert_eq!(d.quantile(beta).unwrap(), oracle(beta_num, 1000, &atoms));
        }

        #[test]
        fn monotone_in_level(atoms in atoms_strategy(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let d = WeightedDiscreteDist::new(atoms.iter().map(|&(v, m)| (v, m as f64))).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(d.quantile(lo).unwrap() <= d.quantile(hi).unwrap());
        }

        #[test]
        fn invariant_to_mass_scale(
            atoms in prop::collection::vec((-100.0f64..100.0, 0.01f64..10.0), 1..30),
            inf_mass in 0.0f64..5.0,
            c in 1e-3f64..1e3,
            beta in 0.001f64..0.999,
        ) {
            let base = WeightedDiscreteDist::new(
                atoms.iter().copied().chain(std::iter::once((f64::INFINITY, inf_mass))),
            ).unwrap();
            let scaled = WeightedDiscreteDist::new(
                atoms.iter().map(|&(v, m)| (v, m * c)).chain(std::iter::once((f64::INFINITY, inf_mass * c))),
            ).unwrap();
            prop_assert_eq!(base.quantile(beta).unwrap(), scaled.quantile(beta).unwrap());
        }

        #[test]
        fn constant_masses_match_uniform(
            values in prop::collection::vec(-100.0f64..100.0, 1..50),
            c in 1e-6f64..1e6,
            beta in 0.001f64..0.999,
        ) {
            let w = vec![c; values.len()];
            let weighted = WeightedDiscreteDist::with_inf_atom(&values, &w, c).unwrap();
            prop_assert_eq!(
                weighted.quantile(beta).unwrap(),
                empirical_quantile_with_inf(beta, &values).unwrap()
            );
        }
    }
}
