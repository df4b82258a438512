//! The two penalty families: the mixing-proportion penalty keeping weights
//! away from zero, and the sparsity penalties on consecutive atom
//! differences (SCAD, MCP, adaptive lasso) with their data-driven weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proportion penalty `-c * sum_j log pi_j`, nonnegative on (0, 1]^K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPenalty {
    pub c: f64,
}

impl PhiPenalty {
    /// Default constant c = 3 (close to log 20).
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("phi constant must be nonnegative, got {c}"),
            });
        }
        Ok(Self { c })
    }

    /// Zero penalty; turns the preliminary fitter into a plain MLE.
    pub fn disabled() -> Self {
        Self { c: 0.0 }
    }
}

impl Default for PhiPenalty {
    fn default() -> Self {
        Self { c: 3.0 }
    }
}

/// Evaluates `-c * sum_j log pi_j`.
pub fn phi_value(p: &PhiPenalty, weights: &[f64]) -> Result<f64> {
    let mut sum_log = 0.0;
    for &w in weights {
        if !(w > 0.0) {
            return Err(Error::NonPositiveWeight { weight: w });
        }
        sum_log += w.ln();
    }
    Ok(-p.c * sum_log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyKind {
    Scad,
    Mcp,
    Alasso,
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PenaltyKind::Scad => write!(f, "scad"),
            PenaltyKind::Mcp => write!(f, "mcp"),
            PenaltyKind::Alasso => write!(f, "alasso"),
        }
    }
}

/// A sparsity penalty on a difference norm, defined through its derivative.
///
/// SCAD and MCP ignore the adaptive weight; the adaptive lasso ignores the
/// shape parameter and requires the weight exponent `beta > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RPenalty {
    pub kind: PenaltyKind,
    /// Shape parameter: SCAD needs a > 2, MCP needs a > 1.
    pub a: f64,
    /// Adaptive-weight exponent (adaptive lasso only).
    pub beta: f64,
}

impl RPenalty {
    pub fn scad(a: f64) -> Result<Self> {
        if !(a > 2.0) {
            return Err(Error::InvalidConfig {
                reason: format!("SCAD shape must satisfy a > 2, got {a}"),
            });
        }
        Ok(Self {
            kind: PenaltyKind::Scad,
            a,
            beta: 0.0,
        })
    }

    pub fn mcp(a: f64) -> Result<Self> {
        if !(a > 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("MCP shape must satisfy a > 1, got {a}"),
            });
        }
        Ok(Self {
            kind: PenaltyKind::Mcp,
            a,
            beta: 0.0,
        })
    }

    pub fn alasso(beta: f64) -> Result<Self> {
        if !(beta > 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("adaptive-lasso exponent must satisfy beta > 1, got {beta}"),
            });
        }
        Ok(Self {
            kind: PenaltyKind::Alasso,
            a: 0.0,
            beta,
        })
    }

    /// Default shapes: SCAD a = 3.7, MCP a = 3.0, ALasso beta = 2.0.
    pub fn with_defaults(kind: PenaltyKind) -> Self {
        match kind {
            PenaltyKind::Scad => Self::scad(3.7).unwrap(),
            PenaltyKind::Mcp => Self::mcp(3.0).unwrap(),
            PenaltyKind::Alasso => Self::alasso(2.0).unwrap(),
        }
    }

    /// Whether the penalty uses the adaptive weights of the preliminary fit.
    pub fn uses_weights(&self) -> bool {
        self.kind == PenaltyKind::Alasso
    }
}

/// One-sided derivative of the penalty at `eta >= 0` (from the right at 0).
pub fn r_deriv(p: &RPenalty, lambda: f64, eta: f64, omega: f64) -> f64 {
    debug_assert!(eta >= 0.0 && lambda >= 0.0);
    match p.kind {
        PenaltyKind::Scad => {
            if eta <= lambda {
                lambda
            } else {
                (p.a * lambda - eta).max(0.0) / (p.a - 1.0)
            }
        }
        PenaltyKind::Mcp => (lambda - eta / p.a).max(0.0),
        PenaltyKind::Alasso => lambda * omega,
    }
}

/// Closed-form penalty value: the antiderivative of [`r_deriv`] from 0,
/// so `r_value(_, 0, _) = 0` and the value is nondecreasing in `eta`.
pub fn r_value(p: &RPenalty, lambda: f64, eta: f64, omega: f64) -> f64 {
    debug_assert!(eta >= 0.0 && lambda >= 0.0);
    match p.kind {
        PenaltyKind::Scad => {
            let a = p.a;
            if eta <= lambda {
                lambda * eta
            } else if eta <= a * lambda {
                // integral of (a*lambda - t)/(a-1) over [lambda, eta]
                lambda * lambda
                    + (a * lambda * (eta - lambda) - 0.5 * (eta * eta - lambda * lambda))
                        / (a - 1.0)
            } else {
                lambda * lambda * (a + 1.0) / 2.0
            }
        }
        PenaltyKind::Mcp => {
            let a = p.a;
            if eta <= a * lambda {
                lambda * eta - eta * eta / (2.0 * a)
            } else {
                a * lambda * lambda / 2.0
            }
        }
        PenaltyKind::Alasso => lambda * omega * eta,
    }
}

/// Rank-matched adaptive weights: the j-th largest current difference norm
/// is paired with the j-th largest preliminary norm, and the weight is that
/// preliminary norm to the power `-beta`. Ties break by ascending index.
pub fn adaptive_weights(
    current_eta_norms: &[f64],
    tilde_eta_norms: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    if current_eta_norms.len() != tilde_eta_norms.len() {
        return Err(Error::DimensionMismatch {
            expected: current_eta_norms.len(),
            found: tilde_eta_norms.len(),
        });
    }
    for (index, &t) in tilde_eta_norms.iter().enumerate() {
        if !(t > 0.0) {
            return Err(Error::ZeroTildeNorm { index });
        }
    }
    let k1 = current_eta_norms.len();
    // u, v: stable descending sorts of the two norm sequences
    let descending = |norms: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..norms.len()).collect();
        idx.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
        idx
    };
    let u = descending(current_eta_norms);
    let v = descending(tilde_eta_norms);
    // psi = v o u^{-1}: the rank of j under u indexes into v
    let mut u_inv = vec![0usize; k1];
    for (rank, &j) in u.iter().enumerate() {
        u_inv[j] = rank;
    }
    Ok((0..k1)
        .map(|j| tilde_eta_norms[v[u_inv[j]]].powf(-beta))
        .collect())
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Permuting the current norms permutes the weights identically.
        #[test]
        fn adaptive_weights_equivariance(seed in 0u64..500) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k1 = rng.gen_range(1..8usize);
            let current: Vec<f64> = (0..k1).map(|_| rng.gen_range(0.01..5.0)).collect();
            let tilde: Vec<f64> = (0..k1).map(|_| rng.gen_range(0.01..5.0)).collect();
            let beta = rng.gen_range(1.1..3.0);

            let base = adaptive_weights(&current, &tilde, beta).unwrap();
            let mut idx: Vec<usize> = (0..k1).collect();
            idx.shuffle(&mut rng);
            let permuted: Vec<f64> = idx.iter().map(|&i| current[i]).collect();
            let out = adaptive_weights(&permuted, &tilde, beta).unwrap();
            for (slot, &i) in idx.iter().enumerate() {
                prop_assert!((out[slot] - base[i]).abs() < 1e-12);
            }
        }
    }
}
