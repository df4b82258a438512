//! Registry of the simulation models used by the benchmark runner:
//! seven multinomial mixtures, ten multivariate location-Gaussian mixtures
//! (identity or AR covariance, estimated during fitting), and the two
//! bivariate models used by the naive-penalty comparison.

use gsf_core::kernels::{CovarianceMode, GaussianLocationKernel, Kernel, MultinomialKernel};
use gsf_core::{Error, MixingMeasure, Result};

/// Covariance used to generate Gaussian data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSpec {
    Identity,
    /// sigma_ij = 0.5^{|i-j|}
    Ar,
}

#[derive(Debug, Clone)]
pub enum FamilySpec {
    Gaussian { cov: CovSpec },
    Multinomial { trials: u64 },
}

/// One registered simulation model: the true mixing measure and the family
/// it mixes.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub id: &'static str,
    pub family: FamilySpec,
    pub measure: MixingMeasure,
}

impl SimModel {
    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    pub fn true_order(&self) -> usize {
        self.measure.len()
    }

    fn covariance_rows(&self) -> Option<Vec<Vec<f64>>> {
        match &self.family {
            FamilySpec::Gaussian { cov } => {
                let d = self.dim();
                Some(match cov {
                    CovSpec::Identity => (0..d)
                        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect(),
                    CovSpec::Ar => (0..d)
                        .map(|i| {
                            (0..d)
                                .map(|j| 0.5f64.powi((i as i32 - j as i32).abs()))
                                .collect()
                        })
                        .collect(),
                })
            }
            FamilySpec::Multinomial { .. } => None,
        }
    }

    /// Kernel carrying the true generating parameters.
    pub fn generator_kernel(&self) -> Result<Kernel> {
        match &self.family {
            FamilySpec::Gaussian { .. } => Ok(Kernel::Gaussian(GaussianLocationKernel::new(
                self.covariance_rows().unwrap(),
                CovarianceMode::Known,
            )?)),
            FamilySpec::Multinomial { trials } => Ok(Kernel::Multinomial(MultinomialKernel::new(
                *trials,
                self.dim(),
            )?)),
        }
    }

    /// Kernel handed to the fitting methods. Gaussian models estimate the
    /// shared covariance (seeded from the data, not from the truth), unless
    /// the caller pins it to the identity.
    pub fn fitting_kernel(&self, trials_override: Option<u64>, known_identity: bool) -> Result<Kernel> {
        match &self.family {
            FamilySpec::Gaussian { .. } => {
                let d = self.dim();
                let mode = if known_identity {
                    CovarianceMode::Known
                } else {
                    CovarianceMode::Estimated
                };
                Ok(Kernel::Gaussian(GaussianLocationKernel::identity(d, mode)))
            }
            FamilySpec::Multinomial { trials } => Ok(Kernel::Multinomial(MultinomialKernel::new(
                trials_override.unwrap_or(*trials),
                self.dim(),
            )?)),
        }
    }
}

fn multinomial(id: &'static str, trials: u64, weights: Vec<f64>, atoms: Vec<Vec<f64>>) -> SimModel {
    SimModel {
        id,
        family: FamilySpec::Multinomial { trials },
        measure: MixingMeasure { weights, atoms },
    }
}

fn gaussian(id: &'static str, cov: CovSpec, weights: Vec<f64>, atoms: Vec<Vec<f64>>) -> SimModel {
    SimModel {
        id,
        family: FamilySpec::Gaussian { cov },
        measure: MixingMeasure { weights, atoms },
    }
}

/// All registered models.
pub fn registry() -> Vec<SimModel> {
    let third = 1.0 / 3.0;
    vec![
        multinomial(
            "multinomial-1",
            50,
            vec![0.2, 0.8],
            vec![
                vec![0.2, 0.2, 0.2, 0.2, 0.2],
                vec![0.1, 0.3, 0.2, 0.1, 0.3],
            ],
        ),
        multinomial(
            "multinomial-2",
            50,
            vec![third; 3],
            vec![
                vec![0.2, 0.2, 0.2, 0.2, 0.2],
                vec![0.1, 0.3, 0.2, 0.1, 0.3],
                vec![0.3, 0.1, 0.2, 0.3, 0.1],
            ],
        ),
        multinomial(
            "multinomial-3",
            50,
            vec![0.25; 4],
            vec![
                vec![0.2, 0.2, 0.6],
                vec![0.2, 0.6, 0.2],
                vec![0.6, 0.2, 0.2],
                vec![0.45, 0.1, 0.45],
            ],
        ),
        multinomial(
            "multinomial-4",
            50,
            vec![0.2; 5],
            vec![
                vec![0.2, 0.2, 0.6],
                vec![0.6, 0.2, 0.2],
                vec![0.45, 0.1, 0.45],
                vec![0.2, 0.7, 0.1],
                vec![0.1, 0.7, 0.2],
            ],
        ),
        multinomial(
            "multinomial-5",
            50,
            vec![1.0 / 6.0; 6],
            vec![
                vec![0.2, 0.2, 0.6],
                vec![0.2, 0.6, 0.2],
                vec![0.6, 0.2, 0.2],
                vec![0.45, 0.1, 0.45],
                vec![0.2, 0.7, 0.1],
                vec![0.1, 0.7, 0.2],
            ],
        ),
        multinomial(
            "multinomial-6",
            50,
            vec![1.0 / 7.0; 7],
            vec![
                vec![0.2, 0.2, 0.6],
                vec![0.2, 0.6, 0.2],
                vec![0.6, 0.2, 0.2],
                vec![0.45, 0.1, 0.45],
                vec![0.1, 0.7, 0.2],
                vec![0.7, 0.2, 0.1],
                vec![0.1, 0.2, 0.7],
            ],
        ),
        multinomial(
            "multinomial-7",
            50,
            vec![0.125; 8],
            vec![
                vec![0.2, 0.2, 0.2, 0.4],
                vec![0.2, 0.2, 0.4, 0.2],
                vec![0.2, 0.4, 0.2, 0.2],
                vec![0.4, 0.2, 0.2, 0.2],
                vec![0.1, 0.3, 0.1, 0.5],
                vec![0.1, 0.3, 0.5, 0.1],
                vec![0.1, 0.5, 0.3, 0.1],
                vec![0.5, 0.1, 0.3, 0.1],
            ],
        ),
        gaussian(
            "gaussian-1a",
            CovSpec::Identity,
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![2.0, 2.0]],
        ),
        gaussian(
            "gaussian-1b",
            CovSpec::Ar,
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![2.0, 2.0]],
        ),
        gaussian(
            "gaussian-2a",
            CovSpec::Identity,
            vec![0.25; 4],
            vec![
                vec![0.0, 0.0],
                vec![2.0, 2.0],
                vec![4.0, 4.0],
                vec![6.0, 6.0],
            ],
        ),
        gaussian(
            "gaussian-2b",
            CovSpec::Ar,
            vec![0.25; 4],
            vec![
                vec![0.0, 0.0],
                vec![2.0, 2.0],
                vec![4.0, 4.0],
                vec![6.0, 6.0],
            ],
        ),
        gaussian(
            "gaussian-3a",
            CovSpec::Identity,
            vec![third; 3],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![2.5, 1.5, 2.0, 1.5],
                vec![1.5, 3.0, 2.75, 2.0],
            ],
        ),
        gaussian(
            "gaussian-3b",
            CovSpec::Ar,
            vec![third; 3],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![2.5, 1.5, 2.0, 1.5],
                vec![1.5, 3.0, 2.75, 2.0],
            ],
        ),
        gaussian(
            "gaussian-4a",
            CovSpec::Identity,
            vec![0.2; 5],
            vec![
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![-1.5, 2.25, -1.0, 0.0, 0.5, 0.75],
                vec![0.25, 1.5, 0.75, 0.25, -0.5, -1.0],
                vec![-0.25, 0.5, -2.5, 1.25, 0.75, 1.5],
                vec![-1.0, -1.5, -0.25, 1.75, -0.5, 2.0],
            ],
        ),
        gaussian(
            "gaussian-4b",
            CovSpec::Ar,
            vec![0.2; 5],
            vec![
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![-1.5, 2.25, -1.0, 0.0, 0.5, 0.75],
                vec![0.25, 1.5, 0.75, 0.25, -0.5, -1.0],
                vec![-0.25, 0.5, -2.5, 1.25, 0.75, 1.5],
                vec![-1.0, -1.5, -0.25, 1.75, -0.5, 2.0],
            ],
        ),
        gaussian(
            "gaussian-5a",
            CovSpec::Identity,
            vec![0.2; 5],
            vec![
                vec![0.0; 8],
                vec![1.0, 1.5, 0.75, 2.0, 1.5, 1.75, 0.5, 2.5],
                vec![2.0, 0.75, 1.5, 1.0, 1.75, 0.5, 2.5, 1.5],
                vec![1.5, 2.0, 1.0, 0.75, 2.5, 1.5, 1.75, 0.5],
                vec![0.75, 1.0, 2.0, 1.5, 0.5, 2.5, 1.5, 1.75],
            ],
        ),
        gaussian(
            "gaussian-5b",
            CovSpec::Ar,
            vec![0.2; 5],
            vec![
                vec![0.0; 8],
                vec![1.0, 1.5, 0.75, 2.0, 1.5, 1.75, 0.5, 2.5],
                vec![2.0, 0.75, 1.5, 1.0, 1.75, 0.5, 2.5, 1.5],
                vec![1.5, 2.0, 1.0, 0.75, 2.5, 1.5, 1.75, 0.5],
                vec![0.75, 1.0, 2.0, 1.5, 0.5, 2.5, 1.5, 1.75],
            ],
        ),
        gaussian(
            "f1",
            CovSpec::Identity,
            vec![0.5, 0.5],
            vec![vec![-2.0, 0.0], vec![0.0, 1.0]],
        ),
        gaussian(
            "f2",
            CovSpec::Identity,
            vec![third; 3],
            vec![vec![1.0, 2.0], vec![1.0, 0.0], vec![-1.0, -1.0]],
        ),
    ]
}

/// Looks a model up by id.
pub fn registry_lookup(id: &str) -> Result<SimModel> {
    registry()
        .into_iter()
        .find(|m| m.id == id)
        .ok_or_else(|| Error::UnknownModel { id: id.to_string() })
}
