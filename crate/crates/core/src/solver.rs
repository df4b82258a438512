//! The modified EM algorithm: E-step responsibilities, closed-form
//! proportion update, and a proximal-gradient M-step in consecutive-
//! difference coordinates with backtracking line search and multivariate
//! soft-thresholding. Also the plain (unfused) EM used for the preliminary
//! estimator and the information-criterion baselines, and k-means++ style
//! multi-start initialization.
//!
//! A single fit is sequential; all states are value types, so independent
//! fits can run concurrently. RNG is per-fit and seeded explicitly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{Dataset, MixingMeasure};
use crate::error::{Error, Result};
use crate::kernels::{shared_covariance_update_with, CovarianceMode, Kernel};
use crate::ordering::{consecutive_differences, nn_chain_ordering};
use crate::penalties::{adaptive_weights, phi_value, r_deriv, r_value, PhiPenalty, RPenalty};

/// Solver tolerances and iteration caps.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Inner (proximal gradient) convergence threshold on the eta change.
    pub eps_inner: f64,
    /// Outer (EM) convergence threshold on the parameter-vector change.
    pub delta_outer: f64,
    pub max_em_iters: usize,
    pub max_pgd_iters: usize,
    /// Base step-size parameter for the line search.
    pub rho0: f64,
    /// Line-search growth factor (> 1).
    pub rho_growth: f64,
    /// Number of random initializations kept by the multi-start drivers.
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_inner: 1e-5,
            delta_outer: 1e-8,
            max_em_iters: 2500,
            max_pgd_iters: 1000,
            rho0: 1.0,
            rho_growth: 2.0,
            n_starts: 5,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_inner > 0.0 && self.delta_outer > 0.0 && self.rho0 > 0.0) {
            return Err(Error::InvalidConfig {
                reason: "tolerances and rho0 must be positive".into(),
            });
        }
        if !(self.rho_growth > 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("rho growth must exceed 1, got {}", self.rho_growth),
            });
        }
        if self.max_em_iters == 0 || self.max_pgd_iters == 0 || self.n_starts == 0 {
            return Err(Error::InvalidConfig {
                reason: "iteration caps and start count must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Full state of one EM fit.
#[derive(Debug, Clone)]
pub struct FitState {
    pub measure: MixingMeasure,
    /// Estimated shared covariance, when the kernel estimates one.
    pub covariance: Option<DMatrix<f64>>,
    /// n x K responsibilities at the returned measure.
    pub responsibilities: Vec<Vec<f64>>,
    /// Doubly penalized objective at the returned state.
    pub penalized_loglik: f64,
    /// Unpenalized mixture log-likelihood at the returned state.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each outer iteration (diagnostic).
    pub objective_trace: Vec<f64>,
}

/// Splittable seed derivation for independent replications and starts.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Kernel with any re-estimated covariance applied.
fn effective_kernel(kernel: &Kernel, covariance: Option<&DMatrix<f64>>) -> Result<Kernel> {
    match (kernel, covariance) {
        (Kernel::Gaussian(g), Some(cov)) => Ok(Kernel::Gaussian(g.with_covariance(cov.clone())?)),
        (Kernel::Multinomial(_), Some(_)) => Err(Error::InvalidConfig {
            reason: "covariance override is only meaningful for the Gaussian kernel".into(),
        }),
        _ => Ok(kernel.clone()),
    }
}

/// Reusable flat n x k buffers for the EM inner loops: the weighted
/// log-density matrix `ln pi_j + ln f(y_i; theta_j)` and the
/// responsibilities derived from it. Keeping them flat and reused avoids
/// per-iteration allocation in the hot loops.
pub(crate) struct EmWorkspace {
    pub(crate) n: usize,
    pub(crate) k: usize,
    wld: Vec<f64>,
    pub(crate) resp: Vec<f64>,
}

impl EmWorkspace {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            wld: vec![0.0; n * k],
            resp: vec![0.0; n * k],
        }
    }

    /// Fills the weighted log-density matrix through per-component
    /// precomputations, one length-d dot product per entry.
    pub(crate) fn fill(&mut self, kernel: &Kernel, dataset: &Dataset, measure: &MixingMeasure) {
        let k = self.k;
        debug_assert_eq!(measure.len(), k);
        debug_assert_eq!(dataset.len(), self.n);
        let log_pi: Vec<f64> = measure
            .weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        match kernel {
            Kernel::Gaussian(g) => {
                let d = g.dim();
                let a = g.inverse();
                let half_const = 0.5 * (d as f64 * LOG_2PI + g.log_det());
                // ln f = -hc - 0.5 y'Ay + (A theta)'y - 0.5 theta'A theta
                let mut atheta = vec![vec![0.0; d]; k];
                let mut offset = vec![0.0; k];
                for j in 0..k {
                    let th = &measure.atoms[j];
                    for r in 0..d {
                        for c in 0..d {
                            atheta[j][r] += a[(r, c)] * th[c];
                        }
                    }
                    let quad: f64 = atheta[j].iter().zip(th).map(|(x, y)| x * y).sum();
                    offset[j] = log_pi[j] - half_const - 0.5 * quad;
                }
                for (i, y) in dataset.observations.iter().enumerate() {
                    let mut yay = 0.0;
                    for r in 0..d {
                        let mut row = 0.0;
                        for c in 0..d {
                            row += a[(r, c)] * y[c];
                        }
                        yay += row * y[r];
                    }
                    let out = &mut self.wld[i * k..(i + 1) * k];
                    for (j, slot) in out.iter_mut().enumerate() {
                        let dot: f64 = atheta[j].iter().zip(y).map(|(x, v)| x * v).sum();
                        *slot = offset[j] - 0.5 * yay + dot;
                    }
                }
            }
            Kernel::Multinomial(mk) => {
                let log_theta: Vec<Vec<f64>> = measure
                    .atoms
                    .iter()
                    .map(|th| th.iter().map(|t| t.ln()).collect())
                    .collect();
                for (i, y) in dataset.observations.iter().enumerate() {
                    let coeff = mk.log_coeff(y);
                    let out = &mut self.wld[i * k..(i + 1) * k];
                    for (j, slot) in out.iter_mut().enumerate() {
                        let dot: f64 =
                            log_theta[j].iter().zip(y).map(|(lt, v)| lt * v).sum();
                        *slot = log_pi[j] + coeff + dot;
                    }
                }
            }
        }
    }

    /// One pass turning the filled matrix into responsibilities, returning
    /// the mixture log-likelihood. Entries more than 46 nats below their
    /// row maximum underflow to exact zeros.
    pub(crate) fn normalize(&mut self) -> Result<f64> {
        let k = self.k;
        let mut loglik = 0.0;
        for i in 0..self.n {
            let row = &self.wld[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::AllZeroLikelihood { row: i });
            }
            let out = &mut self.resp[i * k..(i + 1) * k];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                let e = if v - m > -46.0 { (v - m).exp() } else { 0.0 };
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
            loglik += m + sum.ln();
        }
        Ok(loglik)
    }

    /// Log-likelihood of the filled matrix without touching the
    /// responsibilities.
    fn loglik(&self) -> f64 {
        let k = self.k;
        (0..self.n)
            .map(|i| {
                let row = &self.wld[i * k..(i + 1) * k];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !m.is_finite() {
                    return m;
                }
                let sum: f64 = row
                    .iter()
                    .map(|&v| if v - m > -46.0 { (v - m).exp() } else { 0.0 })
                    .sum();
                m + sum.ln()
            })
            .sum()
    }

    pub(crate) fn resp_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.resp[i * self.k..(i + 1) * self.k].to_vec())
            .collect()
    }
}

const LOG_2PI: f64 = 1.837877066409345483560659472811;

/// Unpenalized mixture log-likelihood of a measure on a dataset.
pub fn loglik_at(
    kernel: &Kernel,
    dataset: &Dataset,
    measure: &MixingMeasure,
    covariance: Option<&DMatrix<f64>>,
) -> Result<f64> {
    measure.validate()?;
    let kernel = effective_kernel(kernel, covariance)?;
    let mut ws = EmWorkspace::new(dataset.len(), measure.len());
    ws.fill(&kernel, dataset, measure);
    Ok(ws.loglik())
}

/// E-step: posterior component responsibilities, computed in log space
/// with max subtraction so underflow cannot zero out a whole row.
pub fn e_step(
    kernel: &Kernel,
    dataset: &Dataset,
    measure: &MixingMeasure,
    covariance: Option<&DMatrix<f64>>,
) -> Result<Vec<Vec<f64>>> {
    measure.validate()?;
    let kernel = effective_kernel(kernel, covariance)?;
    let mut ws = EmWorkspace::new(dataset.len(), measure.len());
    ws.fill(&kernel, dataset, measure);
    ws.normalize()?;
    Ok(ws.resp_rows())
}

/// Closed-form proportion update under the log proportion penalty:
/// `pi_j = (sum_i w_ij + C) / (n + K C)`, which keeps every proportion at
/// least `C / (n + K C)` when C > 0.
pub fn m_step_pi(responsibilities: &[Vec<f64>], phi: &PhiPenalty) -> Vec<f64> {
    let n = responsibilities.len();
    let k = responsibilities.first().map_or(0, |r| r.len());
    m_step_pi_from(n, k, |i, j| responsibilities[i][j], phi)
}

fn m_step_pi_from(n: usize, k: usize, w_of: impl Fn(usize, usize) -> f64, phi: &PhiPenalty) -> Vec<f64> {
    let c = phi.c;
    let denom = n as f64 + k as f64 * c;
    let mut cols = vec![0.0; k];
    for i in 0..n {
        for (j, col) in cols.iter_mut().enumerate() {
            *col += w_of(i, j);
        }
    }
    cols.into_iter().map(|col| (col + c) / denom).collect()
}

/// Multivariate soft-thresholding: exact zero when `||z|| <= t`, otherwise
/// `z` shrunk radially by `t`.
pub fn soft_threshold(z: &[f64], t: f64) -> Vec<f64> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= t {
        vec![0.0; z.len()]
    } else {
        let scale = 1.0 - t / norm;
        z.iter().map(|v| scale * v).collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Diagnostics from one proximal-gradient M-step.
#[derive(Debug, Clone, Default)]
pub struct PgdStats {
    pub iterations: usize,
    pub converged: bool,
    /// Largest surrogate-gap violation over accepted steps; nonpositive up
    /// to rounding when the line search behaves.
    pub max_surrogate_gap: f64,
}

/// Per-component weighted sufficient statistics of one M-step. With the
/// responsibilities frozen, both families admit objective and gradient
/// evaluations that no longer touch the observations, which is what makes
/// the inner line search affordable.
pub(crate) enum SlotStats {
    Gaussian {
        /// Inverse covariance.
        inv: DMatrix<f64>,
        /// Per-slot responsibility mass.
        mass: Vec<f64>,
        /// inv * (per-slot weighted observation sum).
        asw: Vec<Vec<f64>>,
        /// Per-slot sum of w * y' inv y, folded with the mass constant.
        fixed: Vec<f64>,
    },
    Multinomial {
        /// Per-slot weighted count sums.
        sw: Vec<Vec<f64>>,
        /// Per-slot weighted log multinomial coefficients.
        coeff: Vec<f64>,
    },
}

impl SlotStats {
    /// `w_of(i, s)` maps an observation and a slot to its responsibility;
    /// slots may be a permutation of the component indices.
    pub(crate) fn build(
        kernel: &Kernel,
        dataset: &Dataset,
        k: usize,
        w_of: impl Fn(usize, usize) -> f64,
    ) -> SlotStats {
        match kernel {
            Kernel::Gaussian(g) => {
                let d = g.dim();
                let a = g.inverse().clone();
                let half_const = 0.5 * (d as f64 * LOG_2PI + g.log_det());
                let mut mass = vec![0.0; k];
                let mut sw = vec![vec![0.0; d]; k];
                let mut quad = vec![0.0; k];
                for (i, y) in dataset.observations.iter().enumerate() {
                    let mut yay = 0.0;
                    for r in 0..d {
                        let mut row = 0.0;
                        for c in 0..d {
                            row += a[(r, c)] * y[c];
                        }
                        yay += row * y[r];
                    }
                    for s in 0..k {
                        let w = w_of(i, s);
                        if w > 0.0 {
                            mass[s] += w;
                            quad[s] += w * yay;
                            for (acc, v) in sw[s].iter_mut().zip(y) {
                                *acc += w * v;
                            }
                        }
                    }
                }
                let asw = sw
                    .iter()
                    .map(|v| {
                        (0..d)
                            .map(|r| (0..d).map(|c| a[(r, c)] * v[c]).sum())
                            .collect()
                    })
                    .collect();
                let fixed = (0..k)
                    .map(|s| -0.5 * quad[s] - mass[s] * half_const)
                    .collect();
                SlotStats::Gaussian {
                    inv: a,
                    mass,
                    asw,
                    fixed,
                }
            }
            Kernel::Multinomial(mk) => {
                let d = mk.categories();
                let mut sw = vec![vec![0.0; d]; k];
                let mut coeff = vec![0.0; k];
                for (i, y) in dataset.observations.iter().enumerate() {
                    let c = mk.log_coeff(y);
                    for s in 0..k {
                        let w = w_of(i, s);
                        if w > 0.0 {
                            coeff[s] += w * c;
                            for (acc, v) in sw[s].iter_mut().zip(y) {
                                *acc += w * v;
                            }
                        }
                    }
                }
                SlotStats::Multinomial { sw, coeff }
            }
        }
    }

    fn atom_feasible(&self, theta: &[f64]) -> bool {
        match self {
            SlotStats::Gaussian { .. } => theta.iter().all(|t| t.is_finite()),
            // stay strictly inside the simplex so the log stays finite
            SlotStats::Multinomial { .. } => theta.iter().all(|&t| t > 0.0 && t < 1.0),
        }
    }

    /// `-(1/n) sum_s sum_i w_is ln f(y_i; theta_s)`, or +inf when an atom
    /// leaves the feasible set (the line search then shrinks the step).
    pub(crate) fn objective(&self, atoms: &[Vec<f64>], n: f64) -> f64 {
        if atoms.iter().any(|t| !self.atom_feasible(t)) {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        match self {
            SlotStats::Gaussian {
                inv,
                mass,
                asw,
                fixed,
                ..
            } => {
                let d = atoms.first().map_or(0, |a| a.len());
                for (s, th) in atoms.iter().enumerate() {
                    let mut quad = 0.0;
                    for r in 0..d {
                        let mut row = 0.0;
                        for c in 0..d {
                            row += inv[(r, c)] * th[c];
                        }
                        quad += row * th[r];
                    }
                    let dot: f64 = asw[s].iter().zip(th).map(|(x, y)| x * y).sum();
                    total += fixed[s] + dot - 0.5 * mass[s] * quad;
                }
            }
            SlotStats::Multinomial { sw, coeff } => {
                for (s, th) in atoms.iter().enumerate() {
                    let dot: f64 = sw[s].iter().zip(th).map(|(w, t)| w * t.ln()).sum();
                    total += coeff[s] + dot;
                }
            }
        }
        -total / n
    }

    /// Gradient of [`Self::objective`] with respect to each atom; tangent-
    /// projected for the simplex-constrained family.
    pub(crate) fn slot_gradients(&self, atoms: &[Vec<f64>], n: f64) -> Vec<Vec<f64>> {
        match self {
            SlotStats::Gaussian {
                inv, mass, asw, ..
            } => {
                let d = atoms.first().map_or(0, |a| a.len());
                atoms
                    .iter()
                    .enumerate()
                    .map(|(s, th)| {
                        (0..d)
                            .map(|r| {
                                let mut ath = 0.0;
                                for c in 0..d {
                                    ath += inv[(r, c)] * th[c];
                                }
                                -(asw[s][r] - mass[s] * ath) / n
                            })
                            .collect()
                    })
                    .collect()
            }
            SlotStats::Multinomial { sw, .. } => atoms
                .iter()
                .enumerate()
                .map(|(s, th)| {
                    let mut g: Vec<f64> = sw[s]
                        .iter()
                        .zip(th)
                        .map(|(w, t)| -(w / t) / n)
                        .collect();
                    let mean = g.iter().sum::<f64>() / g.len() as f64;
                    for v in &mut g {
                        *v -= mean;
                    }
                    g
                })
                .collect(),
        }
    }
}

/// M-step objective in eta coordinates: slot s of the ordering holds atom
/// `theta_s = eta_0 + ... + eta_s`.
struct EtaProblem {
    stats: SlotStats,
    k: usize,
    d: usize,
    n: f64,
}

impl EtaProblem {
    fn atoms_from_eta(&self, eta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut atoms = Vec::with_capacity(self.k);
        let mut acc = vec![0.0; self.d];
        for eta_s in eta {
            for (a, e) in acc.iter_mut().zip(eta_s) {
                *a += e;
            }
            atoms.push(acc.clone());
        }
        atoms
    }

    fn objective(&self, eta: &[Vec<f64>]) -> f64 {
        self.stats.objective(&self.atoms_from_eta(eta), self.n)
    }

    /// Gradient with respect to each eta block: suffix sums of the
    /// per-slot atom gradients (eta_l feeds every slot s >= l).
    fn gradient(&self, eta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let atoms = self.atoms_from_eta(eta);
        let mut slot_grads = self.stats.slot_gradients(&atoms, self.n);
        for s in (0..self.k.saturating_sub(1)).rev() {
            let (head, tail) = slot_grads.split_at_mut(s + 1);
            for (acc, next) in head[s].iter_mut().zip(&tail[0]) {
                *acc += next;
            }
        }
        slot_grads
    }
}

/// Proximal-gradient M-step for the atoms. The current atoms are sorted by
/// the nearest-neighbor chain ordering, transformed to consecutive
/// differences, and iterated: the base coordinate takes a plain gradient
/// step while each difference block is soft-thresholded at the frozen
/// penalty derivative (local linear approximation). The step size is found
/// by a backtracking line search that grows `rho` until the isotropic
/// quadratic surrogate majorizes the objective at the candidate.
pub fn m_step_theta_pgd(
    kernel: &Kernel,
    dataset: &Dataset,
    responsibilities: &[Vec<f64>],
    atoms: &[Vec<f64>],
    penalty: &RPenalty,
    lambda: f64,
    omegas: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<Vec<f64>>, PgdStats)> {
    m_step_theta_pgd_with(
        kernel,
        dataset,
        |i, j| responsibilities[i][j],
        atoms,
        penalty,
        lambda,
        omegas,
        config,
    )
}

/// [`m_step_theta_pgd`] with the responsibilities supplied by an accessor,
/// so the fitters can pass their flat buffers without reshaping.
#[allow(clippy::too_many_arguments)]
pub(crate) fn m_step_theta_pgd_with(
    kernel: &Kernel,
    dataset: &Dataset,
    w_of: impl Fn(usize, usize) -> f64,
    atoms: &[Vec<f64>],
    penalty: &RPenalty,
    lambda: f64,
    omegas: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<Vec<f64>>, PgdStats)> {
    let k = atoms.len();
    let d = atoms.first().map_or(0, |a| a.len());
    let ordering = nn_chain_ordering(atoms);
    let diffs = consecutive_differences(atoms, &ordering);

    // eta_0 is the first visited atom, eta_s (s >= 1) the consecutive steps
    let mut eta: Vec<Vec<f64>> = Vec::with_capacity(k);
    eta.push(atoms[ordering.perm[0]].clone());
    eta.extend(diffs.iter().cloned());

    // LLA thresholds frozen at the incoming iterate
    let thresholds: Vec<f64> = (1..k)
        .map(|j| {
            let omega = omegas.get(j - 1).copied().unwrap_or(1.0);
            r_deriv(penalty, lambda, norm2(&eta[j]), omega)
        })
        .collect();

    let stats = SlotStats::build(kernel, dataset, k, |i, s| w_of(i, ordering.perm[s]));
    let problem = EtaProblem {
        stats,
        k,
        d,
        n: dataset.len() as f64,
    };

    let rho_cap = 1e12 * config.rho0;
    let mut stats = PgdStats::default();
    let mut l_cur = problem.objective(&eta);
    let mut rho_prev = config.rho0;

    for m in 0..config.max_pgd_iters {
        stats.iterations = m + 1;
        let grad = problem.gradient(&eta);
        let mut rho = (rho_prev / config.rho_growth).max(config.rho0);
        let (eta_new, l_new) = loop {
            let mut cand = Vec::with_capacity(k);
            let step: Vec<f64> = eta[0]
                .iter()
                .zip(&grad[0])
                .map(|(e, g)| e - g / rho)
                .collect();
            cand.push(step);
            for j in 1..k {
                let z: Vec<f64> = eta[j]
                    .iter()
                    .zip(&grad[j])
                    .map(|(e, g)| e - g / rho)
                    .collect();
                cand.push(soft_threshold(&z, thresholds[j - 1] / rho));
            }
            let l_cand = problem.objective(&cand);
            // surrogate check: Q(cand) <= Qbar(cand); the frozen penalty
            // terms coincide on both sides, leaving the smooth part
            let mut lin = l_cur;
            let mut sq = 0.0;
            for j in 0..k {
                for l in 0..d {
                    let delta = cand[j][l] - eta[j][l];
                    lin += grad[j][l] * delta;
                    sq += delta * delta;
                }
            }
            let bound = lin + 0.5 * rho * sq;
            let slack = 1e-12 * (1.0 + l_cur.abs());
            if l_cand <= bound + slack {
                stats.max_surrogate_gap = stats.max_surrogate_gap.max(l_cand - bound);
                break (cand, l_cand);
            }
            rho *= config.rho_growth;
            if rho > rho_cap {
                return Err(Error::LineSearchDiverged { cap: rho_cap });
            }
        };
        rho_prev = rho;
        let change: f64 = eta_new
            .iter()
            .zip(&eta)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt();
        eta = eta_new;
        l_cur = l_new;
        if change < config.eps_inner {
            stats.converged = true;
            break;
        }
    }

    // reconstruct atoms by cumulative sums; exactly fused blocks stay
    // bitwise identical through identical arithmetic
    let slot_atoms = problem.atoms_from_eta(&eta);
    let mut new_atoms = atoms.to_vec();
    for (s, &orig) in ordering.perm.iter().enumerate() {
        new_atoms[orig] = slot_atoms[s].clone();
    }
    if let Kernel::Multinomial(mk) = kernel {
        for atom in &mut new_atoms {
            mk.project_to_simplex(atom);
        }
    }
    Ok((new_atoms, stats))
}

/// Per-iteration objective bookkeeping shared by the fitters.
fn penalized_objective(
    loglik: f64,
    weights: &[f64],
    atoms: &[Vec<f64>],
    phi: &PhiPenalty,
    penalty: Option<(&RPenalty, f64, &[f64])>,
    n: usize,
) -> Result<f64> {
    let phi_term = if phi.c > 0.0 {
        phi_value(phi, weights)?
    } else {
        0.0
    };
    let mut fuse_term = 0.0;
    if let Some((pen, lambda, omegas)) = penalty {
        let ordering = nn_chain_ordering(atoms);
        for (j, diff) in consecutive_differences(atoms, &ordering).iter().enumerate() {
            let omega = omegas.get(j).copied().unwrap_or(1.0);
            fuse_term += r_value(pen, lambda, norm2(diff), omega);
        }
        fuse_term *= n as f64;
    }
    Ok(loglik - phi_term - fuse_term)
}

/// Concatenated (atoms, weights) distance used for outer convergence.
fn param_change(old: &MixingMeasure, new: &MixingMeasure) -> f64 {
    let mut acc = 0.0;
    for (a, b) in old.atoms.iter().zip(&new.atoms) {
        for (x, y) in a.iter().zip(b) {
            acc += (x - y) * (x - y);
        }
    }
    for (x, y) in old.weights.iter().zip(&new.weights) {
        acc += (x - y) * (x - y);
    }
    acc.sqrt()
}

/// Sample covariance about the grand mean, used to start fits whose kernel
/// estimates a shared covariance; `None` for other kernels.
pub fn default_covariance(kernel: &Kernel, dataset: &Dataset) -> Option<DMatrix<f64>> {
    match kernel {
        Kernel::Gaussian(g) if g.mode() == CovarianceMode::Estimated => {
            let n = dataset.len();
            let d = dataset.dim();
            let mut mean = vec![0.0; d];
            for y in &dataset.observations {
                for (m, v) in mean.iter_mut().zip(y) {
                    *m += v / n as f64;
                }
            }
            let mut s: DMatrix<f64> = DMatrix::zeros(d, d);
            for y in &dataset.observations {
                for a in 0..d {
                    for b in 0..d {
                        s[(a, b)] += (y[a] - mean[a]) * (y[b] - mean[b]) / n as f64;
                    }
                }
            }
            // guard against rank deficiency in tiny samples
            let trace: f64 = s.trace();
            let floor = 1e-8 * (trace / d as f64).max(1e-8);
            for i in 0..d {
                s[(i, i)] += floor;
            }
            Some(s)
        }
        _ => None,
    }
}

/// Weights for the fuse penalty at the current iterate: rank-matched
/// adaptive weights against the frozen preliminary-fit difference norms for
/// the adaptive lasso, unit weights otherwise.
fn current_omegas(
    penalty: &RPenalty,
    atoms: &[Vec<f64>],
    tilde_norms: &[f64],
) -> Result<Vec<f64>> {
    let k = atoms.len();
    if !penalty.uses_weights() || k <= 1 {
        return Ok(vec![1.0; k.saturating_sub(1)]);
    }
    let ordering = nn_chain_ordering(atoms);
    let cur_norms: Vec<f64> = consecutive_differences(atoms, &ordering)
        .iter()
        .map(|d| norm2(d))
        .collect();
    adaptive_weights(&cur_norms, tilde_norms, penalty.beta)
}

/// Fits the doubly penalized likelihood by the modified EM algorithm:
/// responsibilities, closed-form proportions, proximal-gradient atoms, and
/// (for an estimated covariance) the pooled covariance update, iterated
/// until the parameter change drops below `delta_outer`.
///
/// `tilde_norms` are the preliminary-fit consecutive difference norms used
/// by the adaptive lasso; they are ignored by SCAD and MCP.
#[allow(clippy::too_many_arguments)]
pub fn fit_gsf(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    lambda: f64,
    tilde_norms: &[f64],
    phi: &PhiPenalty,
    config: &SolverConfig,
    init: &MixingMeasure,
    init_covariance: Option<&DMatrix<f64>>,
) -> Result<FitState> {
    config.validate()?;
    init.validate()?;
    if init.len() != k_bound {
        return Err(Error::InvalidConfig {
            reason: format!("init has {} atoms, bound is {k_bound}", init.len()),
        });
    }
    let n = dataset.len();
    let mut measure = init.clone();
    let mut covariance = match init_covariance {
        Some(c) => Some(c.clone()),
        None => default_covariance(kernel, dataset),
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut best: Option<(f64, MixingMeasure, Option<DMatrix<f64>>)> = None;
    let mut last_change = f64::INFINITY;

    let mut eff = effective_kernel(kernel, covariance.as_ref())?;
    let mut ws = EmWorkspace::new(n, k_bound);
    ws.fill(&eff, dataset, &measure);

    loop {
        // responsibilities of the current state; its log-likelihood closes
        // the bookkeeping of the previous update
        let loglik = ws.normalize()?;
        if iterations > 0 {
            let omegas = current_omegas(penalty, &measure.atoms, tilde_norms)?;
            let objective = penalized_objective(
                loglik,
                &measure.weights,
                &measure.atoms,
                phi,
                Some((penalty, lambda, &omegas)),
                n,
            )?;
            trace.push(objective);
            if best.as_ref().map_or(true, |(b, _, _)| objective > *b) {
                best = Some((objective, measure.clone(), covariance.clone()));
            }
            if last_change < config.delta_outer {
                converged = true;
                break;
            }
        }
        if iterations == config.max_em_iters {
            break;
        }
        iterations += 1;

        let resp = &ws.resp;
        let k = ws.k;
        let new_weights = m_step_pi_from(n, k, |i, j| resp[i * k + j], phi);
        let omegas = current_omegas(penalty, &measure.atoms, tilde_norms)?;
        let (new_atoms, _stats) = m_step_theta_pgd_with(
            &eff,
            dataset,
            |i, j| resp[i * k + j],
            &measure.atoms,
            penalty,
            lambda,
            &omegas,
            config,
        )?;
        if let Kernel::Gaussian(g) = kernel {
            if g.mode() == CovarianceMode::Estimated {
                covariance = Some(shared_covariance_update_with(dataset, &new_atoms, |i, j| {
                    resp[i * k + j]
                })?);
            }
        }
        let new_measure = MixingMeasure {
            weights: new_weights,
            atoms: new_atoms,
        };
        eff = effective_kernel(kernel, covariance.as_ref())?;
        last_change = param_change(&measure, &new_measure);
        measure = new_measure;
        ws.fill(&eff, dataset, &measure);
    }

    let (objective, measure, covariance) = match best {
        Some(b) => b,
        None => {
            // zero M-step updates cannot happen (config validated)
            (ws.loglik(), measure, covariance)
        }
    };
    let eff = effective_kernel(kernel, covariance.as_ref())?;
    ws.fill(&eff, dataset, &measure);
    let loglik = ws.normalize()?;
    Ok(FitState {
        measure,
        covariance,
        responsibilities: ws.resp_rows(),
        penalized_loglik: objective,
        loglik,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Plain EM (no fuse penalty): closed-form weighted-mean update for the
/// Gaussian atoms and weighted-frequency update for multinomial atoms.
/// With `phi.c = 0` this is the classical maximum-likelihood EM; with a
/// positive constant it fits the preliminary estimator.
pub fn fit_plain_em(
    kernel: &Kernel,
    dataset: &Dataset,
    k: usize,
    phi: &PhiPenalty,
    config: &SolverConfig,
    init: &MixingMeasure,
) -> Result<FitState> {
    config.validate()?;
    init.validate()?;
    if init.len() != k {
        return Err(Error::InvalidConfig {
            reason: format!("init has {} atoms, expected {k}", init.len()),
        });
    }
    let n = dataset.len();
    let d = dataset.dim();
    let mut measure = init.clone();
    let mut covariance = default_covariance(kernel, dataset);
    let mut eff = effective_kernel(kernel, covariance.as_ref())?;
    let mut ws = EmWorkspace::new(n, k);
    ws.fill(&eff, dataset, &measure);

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;

    loop {
        let loglik = ws.normalize()?;
        if iterations > 0 {
            let objective =
                penalized_objective(loglik, &measure.weights, &measure.atoms, phi, None, n)?;
            trace.push(objective);
            if last_change < config.delta_outer {
                converged = true;
                break;
            }
        }
        if iterations == config.max_em_iters {
            break;
        }
        iterations += 1;

        let resp = &ws.resp;
        let new_weights = m_step_pi_from(n, k, |i, j| resp[i * k + j], phi);
        let mut new_atoms = measure.atoms.clone();
        for j in 0..k {
            let mut col_sum = 0.0;
            let mut acc = vec![0.0; d];
            for (i, y) in dataset.observations.iter().enumerate() {
                let w = resp[i * k + j];
                if w > 0.0 {
                    col_sum += w;
                    for (a, v) in acc.iter_mut().zip(y) {
                        *a += w * v;
                    }
                }
            }
            if col_sum <= 0.0 {
                continue; // dead component keeps its atom
            }
            match kernel {
                Kernel::Gaussian(_) => {
                    for a in &mut acc {
                        *a /= col_sum;
                    }
                    new_atoms[j] = acc;
                }
                Kernel::Multinomial(mk) => {
                    let denom = mk.trials() as f64 * col_sum;
                    for a in &mut acc {
                        *a /= denom;
                    }
                    mk.project_to_simplex(&mut acc);
                    new_atoms[j] = acc;
                }
            }
        }
        if let Kernel::Gaussian(g) = kernel {
            if g.mode() == CovarianceMode::Estimated {
                covariance = Some(shared_covariance_update_with(dataset, &new_atoms, |i, j| {
                    resp[i * k + j]
                })?);
            }
        }
        let new_measure = MixingMeasure {
            weights: new_weights,
            atoms: new_atoms,
        };
        eff = effective_kernel(kernel, covariance.as_ref())?;
        last_change = param_change(&measure, &new_measure);
        measure = new_measure;
        ws.fill(&eff, dataset, &measure);
    }

    let loglik = ws.normalize()?;
    let responsibilities = ws.resp_rows();
    let penalized =
        penalized_objective(loglik, &measure.weights, &measure.atoms, phi, None, n)?;
    Ok(FitState {
        measure,
        covariance,
        responsibilities,
        penalized_loglik: penalized,
        loglik,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Points the initializer seeds from: raw observations for the Gaussian
/// family, row-normalized counts for the multinomial.
fn seeding_points(kernel: &Kernel, dataset: &Dataset) -> Vec<Vec<f64>> {
    match kernel {
        Kernel::Gaussian(_) => dataset.observations.clone(),
        Kernel::Multinomial(mk) => {
            let m = mk.trials() as f64;
            dataset
                .observations
                .iter()
                .map(|y| y.iter().map(|v| v / m).collect())
                .collect()
        }
    }
}

/// Turns a selected seed point into a valid atom for the kernel. For the
/// multinomial the counts get a light additive smoothing so no initial
/// coordinate starts at the simplex boundary.
fn materialize_atom(kernel: &Kernel, dataset: &Dataset, row: usize) -> Vec<f64> {
    match kernel {
        Kernel::Gaussian(_) => dataset.observations[row].clone(),
        Kernel::Multinomial(mk) => {
            let d = mk.categories() as f64;
            let m = mk.trials() as f64;
            let mut atom: Vec<f64> = dataset.observations[row]
                .iter()
                .map(|&y| (y + 1.0) / (m + d))
                .collect();
            mk.project_to_simplex(&mut atom);
            atom
        }
    }
}

fn centroid_atom(kernel: &Kernel, dataset: &Dataset) -> Vec<f64> {
    let n = dataset.len() as f64;
    let d = dataset.dim();
    let points = seeding_points(kernel, dataset);
    let mut c = vec![0.0; d];
    for p in &points {
        for (a, v) in c.iter_mut().zip(p) {
            *a += v / n;
        }
    }
    if let Kernel::Multinomial(mk) = kernel {
        mk.project_to_simplex(&mut c);
    }
    c
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deterministic k-means++ style initial measures: `n_starts` seedings of
/// `k` atoms with uniform weights. A single component starts at the data
/// centroid.
pub fn initialize(
    kernel: &Kernel,
    dataset: &Dataset,
    k: usize,
    seed: u64,
    n_starts: usize,
) -> Result<Vec<MixingMeasure>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "cannot initialize from an empty dataset".into(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig {
            reason: "component count must be positive".into(),
        });
    }
    let n = dataset.len();
    let points = seeding_points(kernel, dataset);
    let mut out = Vec::with_capacity(n_starts);
    for start in 0..n_starts {
        if k == 1 {
            out.push(MixingMeasure {
                weights: vec![1.0],
                atoms: vec![centroid_atom(kernel, dataset)],
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, start as u64));
        let mut chosen: Vec<usize> = vec![rng.gen_range(0..n)];
        let mut dist2: Vec<f64> = points
            .iter()
            .map(|p| squared_distance(p, &points[chosen[0]]))
            .collect();
        while chosen.len() < k {
            let total: f64 = dist2.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in dist2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.gen_range(0..n) // all mass on chosen points already
            };
            chosen.push(next);
            for (i, p) in points.iter().enumerate() {
                let d2 = squared_distance(p, &points[next]);
                if d2 < dist2[i] {
                    dist2[i] = d2;
                }
            }
        }
        out.push(MixingMeasure {
            weights: vec![1.0 / k as f64; k],
            atoms: chosen
                .iter()
                .map(|&row| materialize_atom(kernel, dataset, row))
                .collect(),
        });
    }
    Ok(out)
}

/// Multi-start plain EM keeping the best penalized log-likelihood.
pub fn best_plain_fit(
    kernel: &Kernel,
    dataset: &Dataset,
    k: usize,
    phi: &PhiPenalty,
    config: &SolverConfig,
) -> Result<FitState> {
    let inits = initialize(kernel, dataset, k, config.seed, config.n_starts)?;
    let mut best: Option<FitState> = None;
    for init in &inits {
        let fit = fit_plain_em(kernel, dataset, k, phi, config, init)?;
        if best
            .as_ref()
            .map_or(true, |b| fit.penalized_loglik > b.penalized_loglik)
        {
            best = Some(fit);
        }
    }
    best.ok_or(Error::InvalidConfig {
        reason: "no starts configured".into(),
    })
}
