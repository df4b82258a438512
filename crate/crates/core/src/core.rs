//! Domain types shared by all modules: mixing measures, datasets and
//! regularization-path records, together with their validity invariants.
//!
//! All types here are immutable value objects; they are safe to share and
//! send between threads without synchronization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the mixing-weight sum. The closed-form proportion update is
/// exactly normalized in exact arithmetic; this absorbs rounding only.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// A discrete mixing measure: weighted atoms in parameter space.
///
/// Atoms may repeat; fused components are kept verbatim so the measure
/// always carries the postulated number of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMeasure {
    /// Mixing proportions, nonnegative and summing to one.
    pub weights: Vec<f64>,
    /// Component parameters, all of the same dimension.
    pub atoms: Vec<Vec<f64>>,
}

impl MixingMeasure {
    pub fn new(weights: Vec<f64>, atoms: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { weights, atoms };
        m.validate()?;
        Ok(m)
    }

    /// Number of components (counting fused duplicates).
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Common atom dimension.
    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.len())
    }

    /// Checks all mixing-measure invariants.
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::InvalidAtom {
                reason: "measure must have at least one atom".into(),
            });
        }
        if self.weights.len() != self.atoms.len() {
            return Err(Error::DimensionMismatch {
                expected: self.atoms.len(),
                found: self.weights.len(),
            });
        }
        let d = self.atoms[0].len();
        if d == 0 {
            return Err(Error::InvalidAtom {
                reason: "atoms must have dimension >= 1".into(),
            });
        }
        for atom in &self.atoms {
            if atom.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: atom.len(),
                });
            }
        }
        for (index, &w) in self.weights.iter().enumerate() {
            if !(w >= 0.0) {
                return Err(Error::NegativeWeight { index, weight: w });
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum {
                sum,
                tol: WEIGHT_SUM_TOL,
            });
        }
        Ok(())
    }

    /// Number of distinct components, merging atoms transitively whenever
    /// their Euclidean distance is at most `fuse_tol` (single linkage at the
    /// threshold, so the result is permutation invariant). Zero-weight atoms
    /// do not count toward the order.
    pub fn effective_order(&self, fuse_tol: f64) -> usize {
        let k = self.atoms.len();
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let dist = euclidean(&self.atoms[i], &self.atoms[j]);
                if dist <= fuse_tol {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                    }
                }
            }
        }
        // pool weights per class; count classes carrying positive mass
        let mut pooled = vec![0.0f64; k];
        for i in 0..k {
            let r = find(&mut parent, i);
            pooled[r] += self.weights[i];
        }
        (0..k)
            .filter(|&i| find(&mut parent, i) == i && pooled[i] > 0.0)
            .count()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Validates a mixing measure, returning the first violated invariant.
pub fn validate_measure(m: &MixingMeasure) -> Result<()> {
    m.validate()
}

/// See [`MixingMeasure::effective_order`].
pub fn effective_order(m: &MixingMeasure, fuse_tol: f64) -> usize {
    m.effective_order(fuse_tol)
}

/// A sample of observations, one row each, with any family-specific
/// constants needed to interpret the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// n rows of equal length.
    pub observations: Vec<Vec<f64>>,
    /// Multinomial trial count M; `None` for continuous families.
    pub trials: Option<u64>,
}

impl Dataset {
    pub fn new(observations: Vec<Vec<f64>>, trials: Option<u64>) -> Result<Self> {
        let ds = Self {
            observations,
            trials,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Row length (observation dimension).
    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (row, obs) in self.observations.iter().enumerate() {
            if obs.len() != d {
                return Err(Error::InvalidObservation {
                    reason: format!("row {row}: length {} differs from {}", obs.len(), d),
                });
            }
            if let Some(m) = self.trials {
                let mut sum = 0.0;
                for &y in obs {
                    if y < 0.0 || y.fract() != 0.0 {
                        return Err(Error::InvalidObservation {
                            reason: format!("row {row}: count {y} is not a nonnegative integer"),
                        });
                    }
                    sum += y;
                }
                if sum != m as f64 {
                    return Err(Error::InvalidObservation {
                        reason: format!("row {row}: counts sum to {sum}, expected {m}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One fitted point on a regularization path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    pub lambda: f64,
    pub measure: MixingMeasure,
    /// Number of distinct components, as counted by the fused differences.
    pub order: usize,
    /// Unpenalized log-likelihood at `measure`.
    pub loglik: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// An ordered sequence of path records over an ascending lambda grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizationPath {
    pub records: Vec<PathRecord>,
    pub kernel_id: String,
    pub n: usize,
    pub k_bound: usize,
    /// Number of preliminary-fit difference norms floored away from zero
    /// when building adaptive weights (zero when none were degenerate).
    #[serde(default)]
    pub tilde_floored: usize,
}

impl RegularizationPath {
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].lambda <= w[0].lambda {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "path lambdas not strictly increasing: {} then {}",
                        w[0].lambda, w[1].lambda
                    ),
                });
            }
        }
        for rec in &self.records {
            if rec.measure.len() > self.k_bound {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "record at lambda {} has {} atoms, bound {}",
                        rec.lambda,
                        rec.measure.len(),
                        self.k_bound
                    ),
                });
            }
            rec.measure.validate()?;
        }
        Ok(())
    }

    /// Writes the path as CSV: one row per lambda, fixed `k_bound * d`
    /// coordinate columns with fused components repeated verbatim. This is
    /// the file that drives external regularization plots.
    pub fn to_csv(&self) -> String {
        let d = self
            .records
            .first()
            .map_or(0, |r| r.measure.dim());
        let mut out = String::from("lambda,order,loglik,bic,converged,iterations");
        for j in 1..=self.k_bound {
            for l in 1..=d {
                out.push_str(&format!(",atom{j}_{l}"));
            }
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                rec.lambda, rec.order, rec.loglik, rec.bic, rec.converged, rec.iterations
            ));
            for j in 0..self.k_bound {
                for l in 0..d {
                    match rec.measure.atoms.get(j) {
                        Some(atom) => out.push_str(&format!(",{}", atom[l])),
                        None => out.push(','),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Permuting (atom, weight) pairs never changes the effective order.
        #[test]
        fn effective_order_permutation_invariant(
            seed in 0u64..1000,
            tol in 0.0f64..2.0,
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..8);
            let atoms: Vec<Vec<f64>> = (0..k)
                .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                .collect();
            let weights = vec![1.0 / k as f64; k];
            let m = MixingMeasure { weights: weights.clone(), atoms: atoms.clone() };

            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut rng);
            let m2 = MixingMeasure {
                weights: idx.iter().map(|&i| weights[i]).collect(),
                atoms: idx.iter().map(|&i| atoms[i].clone()).collect(),
            };
            prop_assert_eq!(m.effective_order(tol), m2.effective_order(tol));
        }
    }
}
