//! Parametric density families: multivariate location-Gaussian with a
//! shared (known or estimated) covariance, and multinomial. Each family
//! provides log-density, parameter gradient, sampling, and a check of the
//! second-order strong-identifiability condition.
//!
//! Kernels are immutable after construction; all operations are pure.
//! Sampling takes an explicit seed, there is no hidden RNG state.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{Dataset, MixingMeasure};
use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

/// Lower clamp for multinomial atom coordinates; atoms are kept in the open
/// simplex by clamping to [CLAMP, 1 - CLAMP] and renormalizing.
pub const SIMPLEX_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceMode {
    Known,
    Estimated,
}

/// Outcome of the strong-identifiability check. Only a sufficient condition
/// is available, hence the tri-state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identifiability {
    Satisfied,
    Violated,
    Unknown,
}

/// Location family of multivariate Gaussians sharing one covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianLocationKernel {
    dim: usize,
    mode: CovarianceMode,
    covariance: DMatrix<f64>,
    inverse: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_det: f64,
}

/// Symmetry within 1e-12 and strictly positive eigenvalues.
fn check_spd(m: &DMatrix<f64>) -> Result<()> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::InvalidConfig {
            reason: format!("covariance must be square, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "covariance not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    ),
                });
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    if let Some(min) = eig
        .eigenvalues
        .iter()
        .cloned()
        .reduce(f64::min)
    {
        if !(min > 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("covariance not positive definite (min eigenvalue {min})"),
            });
        }
    }
    Ok(())
}

impl GaussianLocationKernel {
    pub fn new(covariance: Vec<Vec<f64>>, mode: CovarianceMode) -> Result<Self> {
        let d = covariance.len();
        for row in &covariance {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
        }
        let flat: Vec<f64> = covariance.iter().flatten().cloned().collect();
        let m = DMatrix::from_row_slice(d, d, &flat);
        Self::from_matrix(m, mode)
    }

    pub fn identity(dim: usize, mode: CovarianceMode) -> Self {
        Self::from_matrix(DMatrix::identity(dim, dim), mode).unwrap()
    }

    pub fn from_matrix(covariance: DMatrix<f64>, mode: CovarianceMode) -> Result<Self> {
        check_spd(&covariance)?;
        // symmetrize before factoring so tiny asymmetries cannot leak in
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or_else(|| Error::InvalidConfig {
            reason: "covariance Cholesky factorization failed".into(),
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inverse = chol.inverse();
        Ok(Self {
            dim: sym.nrows(),
            mode,
            chol_lower: chol.l(),
            covariance: sym,
            inverse,
            log_det,
        })
    }

    /// Same mode, new covariance; used when the covariance is re-estimated.
    pub fn with_covariance(&self, covariance: DMatrix<f64>) -> Result<Self> {
        Self::from_matrix(covariance, self.mode)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub(crate) fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub(crate) fn log_det(&self) -> f64 {
        self.log_det
    }

    fn log_density_fast(&self, y: &[f64], theta: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let ri = y[i] - theta[i];
            for j in 0..d {
                quad += ri * self.inverse[(i, j)] * (y[j] - theta[j]);
            }
        }
        -0.5 * (d as f64 * LOG_2PI + self.log_det + quad)
    }

    fn grad_fast(&self, y: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                g[i] += self.inverse[(i, j)] * (y[j] - theta[j]);
            }
        }
        g
    }
}

/// Multinomial family with a known trial count over `categories` cells.
#[derive(Debug, Clone)]
pub struct MultinomialKernel {
    trials: u64,
    categories: usize,
    ln_factorial: Vec<f64>,
}

impl MultinomialKernel {
    pub fn new(trials: u64, categories: usize) -> Result<Self> {
        if trials == 0 {
            return Err(Error::InvalidConfig {
                reason: "multinomial trial count must be positive".into(),
            });
        }
        if categories < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("multinomial needs at least 2 categories, got {categories}"),
            });
        }
        let mut ln_factorial = vec![0.0; trials as usize + 1];
        for k in 2..=trials as usize {
            ln_factorial[k] = ln_factorial[k - 1] + (k as f64).ln();
        }
        Ok(Self {
            trials,
            categories,
            ln_factorial,
        })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    fn validate_atom(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.categories {
            return Err(Error::InvalidAtom {
                reason: format!(
                    "atom has {} coordinates, kernel has {} categories",
                    theta.len(),
                    self.categories
                ),
            });
        }
        let mut sum = 0.0;
        for &t in theta {
            if !(t > 0.0) {
                return Err(Error::InvalidAtom {
                    reason: format!("atom coordinate {t} not strictly positive"),
                });
            }
            sum += t;
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidAtom {
                reason: format!("atom coordinates sum to {sum}"),
            });
        }
        Ok(())
    }

    /// Log multinomial coefficient of a count vector.
    pub fn log_coeff(&self, y: &[f64]) -> f64 {
        let mut c = self.ln_factorial[self.trials as usize];
        for &v in y {
            c -= self.ln_factorial[v as usize];
        }
        c
    }

    fn log_density_fast(&self, y: &[f64], theta: &[f64]) -> f64 {
        let mut lp = self.log_coeff(y);
        for (v, t) in y.iter().zip(theta) {
            if *v > 0.0 {
                lp += v * t.ln();
            }
        }
        lp
    }

    /// Ambient gradient projected onto the sum-zero tangent space of the
    /// simplex, so gradient steps keep atoms on the affine hull.
    fn grad_fast(&self, y: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.categories;
        let mut g: Vec<f64> = y.iter().zip(theta).map(|(v, t)| v / t).collect();
        let mean = g.iter().sum::<f64>() / d as f64;
        for v in &mut g {
            *v -= mean;
        }
        g
    }

    /// Clamps a parameter vector into the open simplex and renormalizes.
    pub fn project_to_simplex(&self, theta: &mut [f64]) {
        let mut sum = 0.0;
        for t in theta.iter_mut() {
            *t = t.clamp(SIMPLEX_CLAMP, 1.0 - SIMPLEX_CLAMP);
            sum += *t;
        }
        for t in theta.iter_mut() {
            *t /= sum;
        }
    }
}

/// The two supported families behind one dispatch type.
#[derive(Debug, Clone)]
pub enum Kernel {
    Gaussian(GaussianLocationKernel),
    Multinomial(MultinomialKernel),
}

impl Kernel {
    pub fn id(&self) -> &'static str {
        match self {
            Kernel::Gaussian(_) => "gaussian",
            Kernel::Multinomial(_) => "multinomial",
        }
    }

    /// Atom dimension of the family.
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Gaussian(k) => k.dim(),
            Kernel::Multinomial(k) => k.categories(),
        }
    }

    pub fn validate_atom(&self, theta: &[f64]) -> Result<()> {
        match self {
            Kernel::Gaussian(k) => {
                if theta.len() != k.dim() {
                    return Err(Error::InvalidAtom {
                        reason: format!("atom has {} coordinates, expected {}", theta.len(), k.dim()),
                    });
                }
                if theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidAtom {
                        reason: "atom has non-finite coordinate".into(),
                    });
                }
                Ok(())
            }
            Kernel::Multinomial(k) => k.validate_atom(theta),
        }
    }

    fn validate_observation(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::InvalidObservation {
                reason: format!("observation has {} coordinates, expected {}", y.len(), self.dim()),
            });
        }
        if let Kernel::Multinomial(k) = self {
            let mut sum = 0.0;
            for &v in y {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::InvalidObservation {
                        reason: format!("count {v} is not a nonnegative integer"),
                    });
                }
                sum += v;
            }
            if sum != k.trials() as f64 {
                return Err(Error::InvalidObservation {
                    reason: format!("counts sum to {sum}, expected {}", k.trials()),
                });
            }
        }
        Ok(())
    }

    /// Log density `log f(y; theta)`; finite for valid inputs.
    pub fn log_density(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        self.validate_atom(theta)?;
        self.validate_observation(y)?;
        Ok(self.log_density_unchecked(y, theta))
    }

    pub(crate) fn log_density_unchecked(&self, y: &[f64], theta: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian(k) => k.log_density_fast(y, theta),
            Kernel::Multinomial(k) => k.log_density_fast(y, theta),
        }
    }

    /// Gradient of the log density with respect to the atom. For the
    /// multinomial this is the simplex-tangent projection of the ambient
    /// gradient.
    pub fn grad_log_density(&self, y: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.validate_atom(theta)?;
        self.validate_observation(y)?;
        Ok(self.grad_log_density_unchecked(y, theta))
    }

    pub(crate) fn grad_log_density_unchecked(&self, y: &[f64], theta: &[f64]) -> Vec<f64> {
        match self {
            Kernel::Gaussian(k) => k.grad_fast(y, theta),
            Kernel::Multinomial(k) => k.grad_fast(y, theta),
        }
    }

    /// Draws `n` iid observations from the mixture: a component index from
    /// the mixing proportions, then an observation from that component.
    /// Deterministic given the seed.
    pub fn sample(&self, measure: &MixingMeasure, n: usize, seed: u64) -> Result<Dataset> {
        measure.validate()?;
        for atom in &measure.atoms {
            self.validate_atom(atom)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let j = sample_categorical(&measure.weights, &mut rng);
            rows.push(self.sample_one(&measure.atoms[j], &mut rng));
        }
        let trials = match self {
            Kernel::Multinomial(k) => Some(k.trials()),
            Kernel::Gaussian(_) => None,
        };
        Dataset::new(rows, trials)
    }

    fn sample_one(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Kernel::Gaussian(k) => {
                let d = k.dim();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let mut y = theta.to_vec();
                for i in 0..d {
                    for j in 0..=i {
                        y[i] += k.chol_lower[(i, j)] * z[j];
                    }
                }
                y
            }
            Kernel::Multinomial(k) => {
                let mut counts = vec![0.0; k.categories()];
                for _ in 0..k.trials() {
                    counts[sample_categorical(theta, rng)] += 1.0;
                }
                counts
            }
        }
    }

    /// Sufficient-condition check of second-order strong identifiability
    /// for an order bound `k`: multinomial requires `3k - 1 <= trials`;
    /// location-Gaussian with known covariance satisfies it, while an
    /// estimated covariance leaves the condition undetermined.
    pub fn check_strong_identifiability(&self, k: usize) -> Identifiability {
        match self {
            Kernel::Multinomial(m) => {
                if 3 * k as u64 <= m.trials() + 1 {
                    Identifiability::Satisfied
                } else {
                    Identifiability::Violated
                }
            }
            Kernel::Gaussian(g) => match g.mode() {
                CovarianceMode::Known => Identifiability::Satisfied,
                CovarianceMode::Estimated => Identifiability::Unknown,
            },
        }
    }
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Pooled responsibility-weighted scatter about the atoms:
/// `(1/n) sum_i sum_j w_ij (y_i - theta_j)(y_i - theta_j)^T`, symmetrized,
/// with eigenvalues floored at `1e-8 * trace/d` to block EM degeneracy on
/// clumped data. Errors if the floor engages on every eigenvalue.
///
/// Expanded through sufficient statistics: the total scatter minus the
/// cross terms with the per-component weighted sums (rows of the
/// responsibility matrix sum to one).
pub fn shared_covariance_update(
    dataset: &Dataset,
    responsibilities: &[Vec<f64>],
    atoms: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    if responsibilities.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: responsibilities.len(),
        });
    }
    shared_covariance_update_with(dataset, atoms, |i, j| responsibilities[i][j])
}

/// [`shared_covariance_update`] with an accessor for the responsibilities.
pub(crate) fn shared_covariance_update_with(
    dataset: &Dataset,
    atoms: &[Vec<f64>],
    w_of: impl Fn(usize, usize) -> f64,
) -> Result<DMatrix<f64>> {
    let n = dataset.len();
    let d = dataset.dim();
    let k = atoms.len();
    let mut s: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut mass = vec![0.0f64; k];
    let mut sw = vec![vec![0.0f64; d]; k];
    for (i, y) in dataset.observations.iter().enumerate() {
        for a in 0..d {
            for b in a..d {
                s[(a, b)] += y[a] * y[b];
            }
        }
        for j in 0..k {
            let w = w_of(i, j);
            if w > 0.0 {
                mass[j] += w;
                for (acc, v) in sw[j].iter_mut().zip(y) {
                    *acc += w * v;
                }
            }
        }
    }
    for j in 0..k {
        for a in 0..d {
            for b in a..d {
                s[(a, b)] += mass[j] * atoms[j][a] * atoms[j][b]
                    - sw[j][a] * atoms[j][b]
                    - atoms[j][a] * sw[j][b];
            }
        }
    }
    let scale = 1.0 / n as f64;
    for a in 0..d {
        for b in a..d {
            let v = s[(a, b)] * scale;
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    let trace = s.trace();
    let floor = if trace > 0.0 { 1e-8 * trace / d as f64 } else { 1e-8 };
    let mut eig = SymmetricEigen::new(s);
    let mut floored = 0;
    for v in eig.eigenvalues.iter_mut() {
        if *v < floor {
            *v = floor;
            floored += 1;
        }
    }
    if floored > d.saturating_sub(1) {
        return Err(Error::DegenerateCovariance { floored, dim: d });
    }
    let q = &eig.eigenvectors;
    let lam = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        eig.eigenvalues.iter().cloned(),
    ));
    let rebuilt: DMatrix<f64> = q * lam * q.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss1(var: f64) -> Kernel {
        Kernel::Gaussian(
            GaussianLocationKernel::new(vec![vec![var]], CovarianceMode::Known).unwrap(),
        )
    }

    #[test]
    fn standard_normal_at_mode() {
        let k = gauss1(1.0);
        let v = k.log_density(&[0.0], &[0.0]).unwrap();
        assert!((v + 0.5 * LOG_2PI).abs() < 1e-12);
        assert!((v + 0.9189385).abs() < 1e-6);
    }

    #[test]
    fn gaussian_2d_identity() {
        let k = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Known));
        let v = k.log_density(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((v - (-LOG_2PI - 1.0)).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn binomial_half() {
        let k = Kernel::Multinomial(MultinomialKernel::new(2, 2).unwrap());
        let v = k.log_density(&[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn multinomial_rejects_off_simplex_atom() {
        let k = Kernel::Multinomial(MultinomialKernel::new(2, 2).unwrap());
        assert!(matches!(
            k.log_density(&[1.0, 1.0], &[0.7, 0.7]),
            Err(Error::InvalidAtom { .. })
        ));
        assert!(matches!(
            k.log_density(&[1.0, 1.0], &[1.0, 0.0]),
            Err(Error::InvalidAtom { .. })
        ));
    }

    #[test]
    fn gaussian_grad_identity_residual() {
        let k = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Known));
        let g = k.grad_log_density(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn multinomial_grad_tangent_projection() {
        let k = Kernel::Multinomial(MultinomialKernel::new(2, 2).unwrap());
        let g = k.grad_log_density(&[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn gaussian_grad_scalar_variance() {
        let k = gauss1(4.0);
        let g = k.grad_log_density(&[3.0], &[1.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12);
    }

    /// Central finite differences of the log density, restricted to
    /// simplex-tangent directions for the multinomial family.
    fn fd_check(kernel: &Kernel, y: &[f64], theta: &[f64]) {
        let g = kernel.grad_log_density(y, theta).unwrap();
        let d = theta.len();
        let h = 1e-6;
        let dirs: Vec<Vec<f64>> = match kernel {
            Kernel::Gaussian(_) => (0..d)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            Kernel::Multinomial(_) => (0..d - 1)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e[i + 1] = -1.0;
                    e
                })
                .collect(),
        };
        for dir in dirs {
            let shift = |sign: f64| -> f64 {
                let t: Vec<f64> = theta
                    .iter()
                    .zip(&dir)
                    .map(|(a, b)| a + sign * h * b)
                    .collect();
                kernel.log_density_unchecked(y, &t)
            };
            let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
            let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let denom = analytic.abs().max(1e-8);
            assert!(
                ((fd - analytic) / denom).abs() < 1e-5,
                "fd {fd} vs grad {analytic}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g2 = Kernel::Gaussian(
            GaussianLocationKernel::new(
                vec![vec![2.0, 0.3], vec![0.3, 1.0]],
                CovarianceMode::Known,
            )
            .unwrap(),
        );
        for _ in 0..20 {
            let y = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let theta = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            fd_check(&g2, &y, &theta);
        }
        let m = Kernel::Multinomial(MultinomialKernel::new(6, 3).unwrap());
        for _ in 0..20 {
            let mut theta = vec![
                rng.gen_range(0.1..0.8),
                rng.gen_range(0.1..0.8),
                rng.gen_range(0.1..0.8),
            ];
            let s: f64 = theta.iter().sum();
            theta.iter_mut().for_each(|t| *t /= s);
            let y = vec![2.0, 3.0, 1.0];
            fd_check(&m, &y, &theta);
        }
    }

    /// Enumerates all count vectors with the given total.
    fn compositions(total: u64, cells: usize) -> Vec<Vec<f64>> {
        if cells == 1 {
            return vec![vec![total as f64]];
        }
        let mut out = Vec::new();
        for first in 0..=total {
            for mut rest in compositions(total - first, cells - 1) {
                let mut v = vec![first as f64];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn multinomial_density_sums_to_one() {
        for (m, d) in [(4u64, 2usize), (7, 3), (10, 3)] {
            let kernel = Kernel::Multinomial(MultinomialKernel::new(m, d).unwrap());
            let mut theta: Vec<f64> = (1..=d).map(|i| i as f64).collect();
            let s: f64 = theta.iter().sum();
            theta.iter_mut().for_each(|t| *t /= s);
            let total: f64 = compositions(m, d)
                .iter()
                .map(|y| kernel.log_density_unchecked(y, &theta).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "M={m} d={d}: {total}");
        }
    }

    #[test]
    fn gaussian_translation_invariance() {
        let k = Kernel::Gaussian(
            GaussianLocationKernel::new(
                vec![vec![1.5, -0.2], vec![-0.2, 0.8]],
                CovarianceMode::Known,
            )
            .unwrap(),
        );
        let a = k.log_density(&[0.3, -0.7], &[1.0, 0.5]).unwrap();
        let b = k
            .log_density(&[0.3 + 4.0, -0.7 - 2.0], &[1.0 + 4.0, 0.5 - 2.0])
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible() {
        let k = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Known));
        let m = MixingMeasure::new(
            vec![0.4, 0.6],
            vec![vec![0.0, 0.0], vec![3.0, 3.0]],
        )
        .unwrap();
        let a = k.sample(&m, 50, 99).unwrap();
        let b = k.sample(&m, 50, 99).unwrap();
        assert_eq!(a, b);
        let c = k.sample(&m, 50, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_empty() {
        let k = Kernel::Gaussian(GaussianLocationKernel::identity(1, CovarianceMode::Known));
        let m = MixingMeasure::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let ds = k.sample(&m, 0, 1).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn gaussian_sample_mean_near_atom() {
        let k = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Known));
        let m = MixingMeasure::new(vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        let ds = k.sample(&m, 10_000, 42).unwrap();
        for l in 0..2 {
            let mean: f64 =
                ds.observations.iter().map(|y| y[l]).sum::<f64>() / ds.len() as f64;
            assert!(mean.abs() < 0.05, "coordinate {l} mean {mean}");
        }
    }

    #[test]
    fn multinomial_sample_frequencies_near_theta() {
        let k = Kernel::Multinomial(MultinomialKernel::new(50, 3).unwrap());
        let theta = vec![0.2, 0.2, 0.6];
        let m = MixingMeasure::new(vec![1.0], vec![theta.clone()]).unwrap();
        let ds = k.sample(&m, 5_000, 7).unwrap();
        let total = 50.0 * ds.len() as f64;
        for l in 0..3 {
            let freq: f64 = ds.observations.iter().map(|y| y[l]).sum::<f64>() / total;
            assert!((freq - theta[l]).abs() < 0.02, "cell {l}: {freq}");
        }
    }

    #[test]
    fn identifiability_bounds() {
        let m50 = Kernel::Multinomial(MultinomialKernel::new(50, 5).unwrap());
        assert_eq!(m50.check_strong_identifiability(12), Identifiability::Satisfied);
        let m35 = Kernel::Multinomial(MultinomialKernel::new(35, 5).unwrap());
        assert_eq!(m35.check_strong_identifiability(12), Identifiability::Satisfied);
        let m10 = Kernel::Multinomial(MultinomialKernel::new(10, 3).unwrap());
        assert_eq!(m10.check_strong_identifiability(4), Identifiability::Violated);
        let gk = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Known));
        assert_eq!(gk.check_strong_identifiability(12), Identifiability::Satisfied);
        let ge = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Estimated));
        assert_eq!(ge.check_strong_identifiability(12), Identifiability::Unknown);
    }

    #[test]
    fn covariance_update_single_component_is_mle() {
        let ds = Dataset::new(vec![vec![0.0], vec![2.0]], None).unwrap();
        let resp = vec![vec![1.0], vec![1.0]];
        let s = shared_covariance_update(&ds, &resp, &[vec![1.0]]).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_update_pooled_on_one_component() {
        // all responsibility on component 0: pooled formula equals the
        // single-component MLE about that atom
        let ds = Dataset::new(vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 0.0]], None).unwrap();
        let resp = vec![vec![1.0, 0.0]; 3];
        let atoms = vec![vec![2.0, 1.0], vec![50.0, 50.0]];
        let s = shared_covariance_update(&ds, &resp, &atoms).unwrap();
        // MLE scatter about (2,1): [[2/3, 2/3], [2/3, 1]]
        for (a, b, expect) in [(0, 0, 2.0 / 3.0), (1, 1, 1.0), (0, 1, 2.0 / 3.0)] {
            assert!((s[(a, b)] - expect).abs() < 1e-9, "({a},{b}): {}", s[(a, b)]);
        }
    }

    #[test]
    fn covariance_update_degenerate_data_errors() {
        let ds = Dataset::new(vec![vec![1.0, 1.0]; 5], None).unwrap();
        let resp = vec![vec![1.0]; 5];
        let err = shared_covariance_update(&ds, &resp, &[vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance { .. }));
    }

    #[test]
    fn spd_check_rejects_asymmetric_and_indefinite() {
        assert!(GaussianLocationKernel::new(
            vec![vec![1.0, 0.5], vec![0.2, 1.0]],
            CovarianceMode::Known
        )
        .is_err());
        assert!(GaussianLocationKernel::new(
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            CovarianceMode::Known
        )
        .is_err());
    }
}
