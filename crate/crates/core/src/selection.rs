//! Order-selection drivers: tuning-parameter grids, regularization paths
//! with warm starts, BIC tuning, hard-threshold merging, AIC/BIC-over-k
//! baselines, and the naive all-pairs penalty variant kept for comparison.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::core::{Dataset, MixingMeasure, PathRecord, RegularizationPath};
use crate::error::{Error, Result};
use crate::kernels::{shared_covariance_update, CovarianceMode, Kernel};
use crate::ordering::{consecutive_differences, nn_chain_ordering};
use crate::penalties::{r_deriv, r_value, PhiPenalty, RPenalty};
use crate::solver::{
    best_plain_fit, e_step, fit_gsf, loglik_at, m_step_pi, soft_threshold, FitState, SolverConfig,
};

/// Distinctness tolerance for the all-pairs variant, whose cyclic prox
/// sweeps leave residual splits below solver precision instead of bitwise
/// zeros.
pub const NAIVE_FUSE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridSpacing {
    Linear,
    Log,
}

/// A grid of candidate tuning-parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
    pub spacing: GridSpacing,
}

impl GridSpec {
    pub fn new(lambda_min: f64, lambda_max: f64, count: usize, spacing: GridSpacing) -> Result<Self> {
        if !(lambda_max > lambda_min) || lambda_min < 0.0 {
            return Err(Error::InvalidGrid {
                lambda_min,
                lambda_max,
            });
        }
        if count < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("grid needs at least 2 points, got {count}"),
            });
        }
        if spacing == GridSpacing::Log && !(lambda_min > 0.0) {
            return Err(Error::InvalidGrid {
                lambda_min,
                lambda_max,
            });
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            count,
            spacing,
        })
    }

    /// Ascending grid values.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.spacing {
                    GridSpacing::Linear => {
                        self.lambda_min + t * (self.lambda_max - self.lambda_min)
                    }
                    GridSpacing::Log => {
                        (self.lambda_min.ln() + t * (self.lambda_max.ln() - self.lambda_min.ln()))
                            .exp()
                    }
                }
            })
            .collect()
    }
}

/// Default tuning grid: 40 log-spaced points with family-specific
/// endpoints. SCAD/MCP use `lambda_max = n^{-1/4} log n` with a floor of
/// 0.1 (Gaussian) or 0.4 (multinomial); the adaptive lasso uses
/// `lambda_max = n^{-1/2} log n` (Gaussian) or `n^{-0.35}` (multinomial)
/// with `lambda_min = 0.01`.
pub fn default_grid(kernel: &Kernel, penalty: &RPenalty, n: usize) -> Result<GridSpec> {
    let nf = n as f64;
    let log_n = nf.ln();
    let (lambda_min, lambda_max) = if penalty.uses_weights() {
        let max = match kernel {
            Kernel::Gaussian(_) => nf.powf(-0.5) * log_n,
            Kernel::Multinomial(_) => nf.powf(-0.35),
        };
        (0.01, max)
    } else {
        let min = match kernel {
            Kernel::Gaussian(_) => 0.1,
            Kernel::Multinomial(_) => 0.4,
        };
        (min, nf.powf(-0.25) * log_n)
    };
    GridSpec::new(lambda_min, lambda_max, 40, GridSpacing::Log)
}

/// Free-parameter count of a fitted mixture of the given order: atom
/// coordinates (one fewer for simplex-constrained atoms), simplex weights,
/// and the covariance entries when it is estimated.
pub fn degrees_of_freedom(kernel: &Kernel, order: usize) -> usize {
    let d_free = match kernel {
        Kernel::Gaussian(g) => g.dim(),
        Kernel::Multinomial(m) => m.categories() - 1,
    };
    let cov_df = match kernel {
        Kernel::Gaussian(g) if g.mode() == CovarianceMode::Estimated => {
            g.dim() * (g.dim() + 1) / 2
        }
        _ => 0,
    };
    order * d_free + (order - 1) + cov_df
}

/// `-2 loglik + df log n` with the free-parameter count of the selected
/// order.
pub fn bic_of(kernel: &Kernel, loglik: f64, n: usize, order: usize) -> f64 {
    -2.0 * loglik + degrees_of_freedom(kernel, order) as f64 * (n as f64).ln()
}

/// `-2 loglik + 2 df`.
pub fn aic_of(kernel: &Kernel, loglik: f64, order: usize) -> f64 {
    -2.0 * loglik + 2.0 * degrees_of_freedom(kernel, order) as f64
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Consecutive difference norms of a measure under its chain ordering.
pub fn eta_norms(measure: &MixingMeasure) -> Vec<f64> {
    let ordering = nn_chain_ordering(&measure.atoms);
    consecutive_differences(&measure.atoms, &ordering)
        .iter()
        .map(|d| norm2(d))
        .collect()
}

/// Order of a fitted measure: one plus the number of nonzero consecutive
/// differences (soft-thresholded blocks are bitwise zero).
pub fn fitted_order(measure: &MixingMeasure) -> usize {
    1 + eta_norms(measure).iter().filter(|&&v| v > 0.0).count()
}

/// Preliminary fit plus the regularization path over an ascending grid.
/// Each tuning value warm-starts from the previous fit (or from the
/// preliminary measure when `warm_start` is off); records of fits that fail
/// numerically keep their warm-start measure and are flagged unconverged.
#[allow(clippy::too_many_arguments)]
pub fn fit_path(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    phi: &PhiPenalty,
    grid: &GridSpec,
    config: &SolverConfig,
    warm_start: bool,
) -> Result<RegularizationPath> {
    let tilde = best_plain_fit(kernel, dataset, k_bound, phi, config)?;
    fit_path_from(kernel, dataset, k_bound, penalty, phi, grid, config, warm_start, &tilde)
}

/// As [`fit_path`] with the preliminary fit supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn fit_path_from(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    phi: &PhiPenalty,
    grid: &GridSpec,
    config: &SolverConfig,
    warm_start: bool,
    tilde: &FitState,
) -> Result<RegularizationPath> {
    let n = dataset.len();
    // preliminary difference norms drive the adaptive weights; exact zeros
    // are floored rather than silently absorbed
    let mut tilde_floored = 0usize;
    let tilde_norms: Vec<f64> = eta_norms(&tilde.measure)
        .into_iter()
        .map(|v| {
            if v < 1e-6 {
                tilde_floored += 1;
                1e-6
            } else {
                v
            }
        })
        .collect();

    let mut records = Vec::with_capacity(grid.count);
    let mut warm_measure = tilde.measure.clone();
    let mut warm_cov = tilde.covariance.clone();
    for &lambda in &grid.values() {
        let init = if warm_start {
            warm_measure.clone()
        } else {
            tilde.measure.clone()
        };
        let init_cov = if warm_start {
            warm_cov.clone()
        } else {
            tilde.covariance.clone()
        };
        match fit_gsf(
            kernel,
            dataset,
            k_bound,
            penalty,
            lambda,
            &tilde_norms,
            phi,
            config,
            &init,
            init_cov.as_ref(),
        ) {
            Ok(fit) => {
                let order = fitted_order(&fit.measure);
                records.push(PathRecord {
                    lambda,
                    order,
                    loglik: fit.loglik,
                    bic: bic_of(kernel, fit.loglik, n, order),
                    converged: fit.converged,
                    iterations: fit.iterations,
                    measure: fit.measure.clone(),
                });
                warm_measure = fit.measure;
                warm_cov = fit.covariance;
            }
            Err(Error::LineSearchDiverged { .. }) | Err(Error::DegenerateCovariance { .. }) => {
                // flagged record at the warm-start measure; path continues
                let loglik = loglik_at(kernel, dataset, &init, init_cov.as_ref())?;
                let order = fitted_order(&init);
                records.push(PathRecord {
                    lambda,
                    order,
                    loglik,
                    bic: bic_of(kernel, loglik, n, order),
                    converged: false,
                    iterations: 0,
                    measure: init,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let path = RegularizationPath {
        records,
        kernel_id: kernel.id().to_string(),
        n,
        k_bound,
        tilde_floored,
    };
    path.validate()?;
    Ok(path)
}

/// Full tuned estimator: fit the path, then keep the record minimizing the
/// BIC (ties resolve to the smaller tuning value).
#[allow(clippy::too_many_arguments)]
pub fn select_order_gsf(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    phi: &PhiPenalty,
    grid: &GridSpec,
    config: &SolverConfig,
    warm_start: bool,
) -> Result<(usize, MixingMeasure, f64, RegularizationPath)> {
    let path = fit_path(kernel, dataset, k_bound, penalty, phi, grid, config, warm_start)?;
    let best = best_record(&path)?;
    Ok((best.order, best.measure.clone(), best.lambda, path))
}

/// Minimal-BIC record; ascending scan keeps the smallest lambda on ties.
pub fn best_record(path: &RegularizationPath) -> Result<&PathRecord> {
    path.records
        .iter()
        .reduce(|best, rec| if rec.bic < best.bic { rec } else { best })
        .ok_or(Error::EmptyPath)
}

/// Hard-threshold merging: walk the chain ordering accumulating a block
/// while the consecutive distance stays within `lambda`; each block emits
/// the unweighted mean of its atoms with the pooled weight.
pub fn gsf_hard(tilde: &MixingMeasure, lambda: f64) -> MixingMeasure {
    let ordering = nn_chain_ordering(&tilde.atoms);
    let sorted_atoms: Vec<&Vec<f64>> = ordering.perm.iter().map(|&j| &tilde.atoms[j]).collect();
    let sorted_weights: Vec<f64> = ordering.perm.iter().map(|&j| tilde.weights[j]).collect();
    let d = tilde.dim();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    let mut block_start = 0;
    let emit = |atoms: &mut Vec<Vec<f64>>, weights: &mut Vec<f64>, lo: usize, hi: usize| {
        let size = (hi - lo) as f64;
        let mut mean = vec![0.0; d];
        let mut mass = 0.0;
        for s in lo..hi {
            for (m, v) in mean.iter_mut().zip(sorted_atoms[s]) {
                *m += v / size;
            }
            mass += sorted_weights[s];
        }
        atoms.push(mean);
        weights.push(mass);
    };
    for s in 1..sorted_atoms.len() {
        let gap = sorted_atoms[s]
            .iter()
            .zip(sorted_atoms[s - 1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if gap > lambda {
            emit(&mut atoms, &mut weights, block_start, s);
            block_start = s;
        }
    }
    emit(&mut atoms, &mut weights, block_start, sorted_atoms.len());
    MixingMeasure { weights, atoms }
}

/// Hard-threshold order selection: one preliminary fit, then merging over a
/// 10-point linear grid on `[1.25, 1.5] n^{-1/4} log n`, scored by BIC with
/// the log-likelihood re-evaluated at the merged measure (no refit).
pub fn select_order_gsf_hard(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    phi: &PhiPenalty,
    config: &SolverConfig,
) -> Result<(usize, MixingMeasure, f64)> {
    let tilde = best_plain_fit(kernel, dataset, k_bound, phi, config)?;
    let n = dataset.len() as f64;
    let base = n.powf(-0.25) * n.ln();
    let grid = GridSpec::new(1.25 * base, 1.5 * base, 10, GridSpacing::Linear)?;
    let mut best: Option<(f64, usize, MixingMeasure, f64)> = None;
    for lambda in grid.values() {
        let merged = gsf_hard(&tilde.measure, lambda);
        let order = merged.len();
        let loglik = loglik_at(kernel, dataset, &merged, tilde.covariance.as_ref())?;
        let bic = bic_of(kernel, loglik, dataset.len(), order);
        if best.as_ref().map_or(true, |(b, ..)| bic < *b) {
            best = Some((bic, order, merged, lambda));
        }
    }
    let (_, order, measure, lambda) = best.ok_or(Error::EmptyPath)?;
    Ok((order, measure, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoCriterion {
    Aic,
    Bic,
}

/// Classical baseline: fit an unpenalized mixture for every order up to
/// `k_max` with multi-start plain EM and keep the criterion minimizer.
pub fn select_order_ic(
    kernel: &Kernel,
    dataset: &Dataset,
    k_max: usize,
    criterion: InfoCriterion,
    config: &SolverConfig,
) -> Result<(usize, MixingMeasure)> {
    let phi = PhiPenalty::disabled();
    let mut best: Option<(f64, usize, MixingMeasure)> = None;
    for k in 1..=k_max {
        let fit = best_plain_fit(kernel, dataset, k, &phi, config)?;
        let score = match criterion {
            InfoCriterion::Aic => aic_of(kernel, fit.loglik, k),
            InfoCriterion::Bic => bic_of(kernel, fit.loglik, dataset.len(), k),
        };
        if best.as_ref().map_or(true, |(b, ..)| score < *b) {
            best = Some((score, k, fit.measure));
        }
    }
    let (_, order, measure) = best.ok_or(Error::EmptyPath)?;
    Ok((order, measure))
}

/// Pairwise (j, k) index list in row-major order.
fn pair_list(k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for j in 0..k {
        for l in (j + 1)..k {
            pairs.push((j, l));
        }
    }
    pairs
}

/// Rank-matched adaptive weights over all pairwise distances, mirroring the
/// consecutive-difference construction.
fn naive_omegas(
    penalty: &RPenalty,
    atoms: &[Vec<f64>],
    tilde_pair_norms: &[f64],
) -> Result<Vec<f64>> {
    let pairs = pair_list(atoms.len());
    if !penalty.uses_weights() {
        return Ok(vec![1.0; pairs.len()]);
    }
    let cur: Vec<f64> = pairs
        .iter()
        .map(|&(j, l)| {
            atoms[j]
                .iter()
                .zip(&atoms[l])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    crate::penalties::adaptive_weights(&cur, tilde_pair_norms, penalty.beta)
}

/// Pairwise distance norms of a measure, floored like the consecutive ones.
pub fn tilde_pair_norms(measure: &MixingMeasure) -> Vec<f64> {
    pair_list(measure.len())
        .iter()
        .map(|&(j, l)| {
            let d: f64 = measure.atoms[j]
                .iter()
                .zip(&measure.atoms[l])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d.max(1e-6)
        })
        .collect()
}

/// Naive all-pairs variant: the same EM skeleton, but the M-step penalizes
/// every unordered pairwise distance. Frozen pair thresholds act through
/// one cyclic pass of pairwise proximal updates per gradient iteration.
/// Kept for the comparison mode; with two components it coincides with the
/// consecutive-difference estimator.
#[allow(clippy::too_many_arguments)]
pub fn fit_naive_gsf(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    phi: &PhiPenalty,
    lambda: f64,
    tilde_pair_norms: &[f64],
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
    let mut covariance = init_covariance.cloned().or_else(|| {
        crate::solver::default_covariance(kernel, dataset)
    });
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for t in 0..config.max_em_iters {
        iterations = t + 1;
        let resp = e_step(kernel, dataset, &measure, covariance.as_ref())?;
        let new_weights = m_step_pi(&resp, phi);
        let omegas = naive_omegas(penalty, &measure.atoms, tilde_pair_norms)?;
        let new_atoms = naive_m_step(
            kernel,
            dataset,
            &resp,
            &measure.atoms,
            penalty,
            lambda,
            &omegas,
            config,
            covariance.as_ref(),
        )?;
        if let Kernel::Gaussian(g) = kernel {
            if g.mode() == CovarianceMode::Estimated {
                covariance = Some(shared_covariance_update(dataset, &resp, &new_atoms)?);
            }
        }
        let new_measure = MixingMeasure {
            weights: new_weights,
            atoms: new_atoms,
        };
        let change = {
            let mut acc = 0.0;
            for (a, b) in measure.atoms.iter().zip(&new_measure.atoms) {
                for (x, y) in a.iter().zip(b) {
                    acc += (x - y) * (x - y);
                }
            }
            for (x, y) in measure.weights.iter().zip(&new_measure.weights) {
                acc += (x - y) * (x - y);
            }
            acc.sqrt()
        };
        let loglik = loglik_at(kernel, dataset, &new_measure, covariance.as_ref())?;
        let omegas_new = naive_omegas(penalty, &new_measure.atoms, tilde_pair_norms)?;
        let mut pen = 0.0;
        for (p, &(j, l)) in pair_list(k_bound).iter().enumerate() {
            let dist: f64 = new_measure.atoms[j]
                .iter()
                .zip(&new_measure.atoms[l])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pen += r_value(penalty, lambda, dist, omegas_new[p]);
        }
        let phi_term = if phi.c > 0.0 {
            crate::penalties::phi_value(phi, &new_measure.weights)?
        } else {
            0.0
        };
        trace.push(loglik - phi_term - n as f64 * pen);
        measure = new_measure;
        if change < config.delta_outer {
            converged = true;
            break;
        }
    }

    let loglik = loglik_at(kernel, dataset, &measure, covariance.as_ref())?;
    let responsibilities = e_step(kernel, dataset, &measure, covariance.as_ref())?;
    let penalized = trace.last().copied().unwrap_or(loglik);
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

/// Gradient step on all atoms followed by one cyclic pass of pairwise
/// fusion proxes, with the same backtracking rule on the smooth part.
#[allow(clippy::too_many_arguments)]
fn naive_m_step(
    kernel: &Kernel,
    dataset: &Dataset,
    resp: &[Vec<f64>],
    atoms: &[Vec<f64>],
    penalty: &RPenalty,
    lambda: f64,
    omegas: &[f64],
    config: &SolverConfig,
    covariance: Option<&DMatrix<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let k = atoms.len();
    let d = atoms.first().map_or(0, |a| a.len());
    let n = dataset.len() as f64;
    let eff = match (kernel, covariance) {
        (Kernel::Gaussian(g), Some(cov)) => Kernel::Gaussian(g.with_covariance(cov.clone())?),
        _ => kernel.clone(),
    };
    let pairs = pair_list(k);
    let thresholds: Vec<f64> = pairs
        .iter()
        .enumerate()
        .map(|(p, &(j, l))| {
            let dist: f64 = atoms[j]
                .iter()
                .zip(&atoms[l])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            r_deriv(penalty, lambda, dist, omegas[p])
        })
        .collect();

    let stats = crate::solver::SlotStats::build(&eff, dataset, k, |i, s| resp[i][s]);
    let objective = |cur: &[Vec<f64>]| -> f64 { stats.objective(cur, n) };
    let gradient = |cur: &[Vec<f64>]| -> Vec<Vec<f64>> { stats.slot_gradients(cur, n) };

    let mut cur = atoms.to_vec();
    let mut l_cur = objective(&cur);
    let mut rho_prev = config.rho0;
    let rho_cap = 1e12 * config.rho0;
    for _ in 0..config.max_pgd_iters {
        let grad = gradient(&cur);
        let mut rho = (rho_prev / config.rho_growth).max(config.rho0);
        let (next, l_next) = loop {
            let mut cand: Vec<Vec<f64>> = cur
                .iter()
                .zip(&grad)
                .map(|(a, g)| a.iter().zip(g).map(|(x, gi)| x - gi / rho).collect())
                .collect();
            // one cyclic sweep of pairwise fusion proxes
            for (p, &(j, l)) in pairs.iter().enumerate() {
                if thresholds[p] <= 0.0 {
                    continue;
                }
                let delta: Vec<f64> = cand[j]
                    .iter()
                    .zip(&cand[l])
                    .map(|(a, b)| a - b)
                    .collect();
                let shrunk = soft_threshold(&delta, 2.0 * thresholds[p] / rho);
                for i in 0..d {
                    let mid = 0.5 * (cand[j][i] + cand[l][i]);
                    cand[j][i] = mid + 0.5 * shrunk[i];
                    cand[l][i] = mid - 0.5 * shrunk[i];
                }
            }
            let l_cand = objective(&cand);
            let mut lin = l_cur;
            let mut sq = 0.0;
            for j in 0..k {
                for i in 0..d {
                    let dv = cand[j][i] - cur[j][i];
                    lin += grad[j][i] * dv;
                    sq += dv * dv;
                }
            }
            if l_cand <= lin + 0.5 * rho * sq + 1e-12 * (1.0 + l_cur.abs()) {
                break (cand, l_cand);
            }
            rho *= config.rho_growth;
            if rho > rho_cap {
                return Err(Error::LineSearchDiverged { cap: rho_cap });
            }
        };
        rho_prev = rho;
        let change: f64 = next
            .iter()
            .zip(&cur)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt();
        cur = next;
        l_cur = l_next;
        if change < config.eps_inner {
            break;
        }
    }
    if let Kernel::Multinomial(mk) = kernel {
        for atom in &mut cur {
            mk.project_to_simplex(atom);
        }
    }
    Ok(cur)
}

/// BIC-tuned order selection for the naive variant over the same grid
/// machinery; the order is counted by fusing atoms within the residual
/// tolerance of the cyclic prox.
#[allow(clippy::too_many_arguments)]
pub fn select_order_naive(
    kernel: &Kernel,
    dataset: &Dataset,
    k_bound: usize,
    penalty: &RPenalty,
    phi: &PhiPenalty,
    grid: &GridSpec,
    config: &SolverConfig,
    warm_start: bool,
) -> Result<(usize, MixingMeasure, f64, RegularizationPath)> {
    let n = dataset.len();
    let tilde = best_plain_fit(kernel, dataset, k_bound, phi, config)?;
    let pair_norms = tilde_pair_norms(&tilde.measure);
    let mut records = Vec::with_capacity(grid.count);
    let mut warm_measure = tilde.measure.clone();
    let mut warm_cov = tilde.covariance.clone();
    for &lambda in &grid.values() {
        let init = if warm_start { warm_measure.clone() } else { tilde.measure.clone() };
        let init_cov = if warm_start { warm_cov.clone() } else { tilde.covariance.clone() };
        match fit_naive_gsf(
            kernel,
            dataset,
            k_bound,
            penalty,
            phi,
            lambda,
            &pair_norms,
            config,
            &init,
            init_cov.as_ref(),
        ) {
            Ok(fit) => {
                let order = fit.measure.effective_order(NAIVE_FUSE_TOL);
                records.push(PathRecord {
                    lambda,
                    order,
                    loglik: fit.loglik,
                    bic: bic_of(kernel, fit.loglik, n, order),
                    converged: fit.converged,
                    iterations: fit.iterations,
                    measure: fit.measure.clone(),
                });
                warm_measure = fit.measure;
                warm_cov = fit.covariance;
            }
            Err(Error::LineSearchDiverged { .. }) | Err(Error::DegenerateCovariance { .. }) => {
                let loglik = loglik_at(kernel, dataset, &init, init_cov.as_ref())?;
                let order = init.effective_order(NAIVE_FUSE_TOL);
                records.push(PathRecord {
                    lambda,
                    order,
                    loglik,
                    bic: bic_of(kernel, loglik, n, order),
                    converged: false,
                    iterations: 0,
                    measure: init,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let path = RegularizationPath {
        records,
        kernel_id: kernel.id().to_string(),
        n,
        k_bound,
        tilde_floored: 0,
    };
    let best = best_record(&path)?;
    Ok((best.order, best.measure.clone(), best.lambda, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GaussianLocationKernel, MultinomialKernel};
    use crate::penalties::PenaltyKind;
    use crate::solver::{fit_plain_em, initialize};

    fn gauss_kernel(d: usize) -> Kernel {
        Kernel::Gaussian(GaussianLocationKernel::identity(d, CovarianceMode::Known))
    }

    #[test]
    fn default_grid_formulas() {
        let g = gauss_kernel(2);
        let scad = RPenalty::with_defaults(PenaltyKind::Scad);
        let grid = default_grid(&g, &scad, 400).unwrap();
        assert_eq!(grid.lambda_min, 0.1);
        assert!((grid.lambda_max - 1.3397).abs() < 1e-4, "{}", grid.lambda_max);
        assert_eq!(grid.count, 40);
        assert_eq!(grid.spacing, GridSpacing::Log);

        let m = Kernel::Multinomial(MultinomialKernel::new(50, 5).unwrap());
        let grid_m = default_grid(&m, &scad, 123).unwrap();
        assert_eq!(grid_m.lambda_min, 0.4);

        let al = RPenalty::with_defaults(PenaltyKind::Alasso);
        let grid_al = default_grid(&g, &al, 10_000).unwrap();
        assert_eq!(grid_al.lambda_min, 0.01);
        assert!((grid_al.lambda_max - 0.0921).abs() < 1e-4, "{}", grid_al.lambda_max);

        let grid_alm = default_grid(&m, &al, 400).unwrap();
        assert!((grid_alm.lambda_max - 400f64.powf(-0.35)).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_inverted_endpoints() {
        // SCAD max n^{-1/4} log n dips below the multinomial floor 0.4
        // once n grows past ~1e7; the caller must widen
        let m = Kernel::Multinomial(MultinomialKernel::new(50, 5).unwrap());
        let scad = RPenalty::with_defaults(PenaltyKind::Scad);
        assert!(matches!(
            default_grid(&m, &scad, 100_000_000),
            Err(Error::InvalidGrid { .. })
        ));
    }

    #[test]
    fn grid_values_are_ascending_and_bounded() {
        let grid = GridSpec::new(0.1, 2.0, 8, GridSpacing::Log).unwrap();
        let vals = grid.values();
        assert_eq!(vals.len(), 8);
        assert!((vals[0] - 0.1).abs() < 1e-12);
        assert!((vals[7] - 2.0).abs() < 1e-12);
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        let lin = GridSpec::new(0.0, 1.0, 5, GridSpacing::Linear).unwrap();
        assert_eq!(lin.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn df_and_criteria_formulas() {
        let g1 = gauss_kernel(1);
        assert_eq!(degrees_of_freedom(&g1, 1), 1);
        let m4 = Kernel::Multinomial(MultinomialKernel::new(10, 4).unwrap());
        assert_eq!(degrees_of_freedom(&m4, 3), 11);
        let g2e = Kernel::Gaussian(GaussianLocationKernel::identity(2, CovarianceMode::Estimated));
        assert_eq!(degrees_of_freedom(&g2e, 2), 8);
        // AIC adds 2 df on top of -2 loglik
        assert!((aic_of(&g1, -10.0, 5) - (20.0 + 2.0 * 9.0)).abs() < 1e-12);
        assert!((bic_of(&g1, -10.0, 100, 1) - (20.0 + 1.0 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gsf_hard_examples() {
        let m = MixingMeasure::new(
            vec![0.3, 0.3, 0.4],
            vec![vec![0.0], vec![0.1], vec![5.0]],
        )
        .unwrap();
        let merged = gsf_hard(&m, 0.5);
        assert_eq!(merged.len(), 2);
        assert!((merged.atoms[0][0] - 0.05).abs() < 1e-12);
        assert!((merged.weights[0] - 0.6).abs() < 1e-12);
        assert!((merged.atoms[1][0] - 5.0).abs() < 1e-12);
        assert!((merged.weights[1] - 0.4).abs() < 1e-12);

        // threshold below every gap: nothing merges
        let untouched = gsf_hard(&m, 0.05);
        assert_eq!(untouched.len(), 3);
        // threshold above every gap: single grand mean
        let all = gsf_hard(&m, 10.0);
        assert_eq!(all.len(), 1);
        assert!((all.atoms[0][0] - (0.0 + 0.1 + 5.0) / 3.0).abs() < 1e-12);
        assert!((all.weights[0] - 1.0).abs() < 1e-12);
    }

    /// Contiguous-merge brute force: every way of cutting the ordered chain
    /// into blocks, keeping only the cut pattern consistent with the
    /// threshold rule.
    fn gsf_hard_oracle(m: &MixingMeasure, lambda: f64) -> MixingMeasure {
        let ordering = nn_chain_ordering(&m.atoms);
        let atoms: Vec<&Vec<f64>> = ordering.perm.iter().map(|&j| &m.atoms[j]).collect();
        let weights: Vec<f64> = ordering.perm.iter().map(|&j| m.weights[j]).collect();
        let k = atoms.len();
        let gaps: Vec<f64> = (1..k)
            .map(|s| {
                atoms[s]
                    .iter()
                    .zip(atoms[s - 1])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for pattern in 0u32..(1 << (k - 1)) {
            let merged_gap = |s: usize| pattern & (1 << s) != 0;
            if (0..k - 1).any(|s| merged_gap(s) != (gaps[s] <= lambda)) {
                continue;
            }
            // apply the merge rule on this pattern
            let mut out_atoms = Vec::new();
            let mut out_weights = Vec::new();
            let mut lo = 0;
            for s in 0..k {
                let cut = s + 1 == k || !merged_gap(s);
                if cut {
                    let size = (s + 1 - lo) as f64;
                    let mut mean = vec![0.0; m.dim()];
                    let mut mass = 0.0;
                    for b in lo..=s {
                        for (mm, v) in mean.iter_mut().zip(atoms[b]) {
                            *mm += v / size;
                        }
                        mass += weights[b];
                    }
                    out_atoms.push(mean);
                    out_weights.push(mass);
                    lo = s + 1;
                }
            }
            return MixingMeasure {
                weights: out_weights,
                atoms: out_atoms,
            };
        }
        unreachable!("exactly one pattern matches the threshold rule");
    }

    #[test]
    fn gsf_hard_matches_contiguous_merge_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let k = rng.gen_range(1..=6);
            let atoms: Vec<Vec<f64>> = (0..k)
                .map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                .collect();
            let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= s);
            let m = MixingMeasure { weights, atoms };
            let lambda = rng.gen_range(0.1..4.0);
            let fast = gsf_hard(&m, lambda);
            let oracle = gsf_hard_oracle(&m, lambda);
            assert_eq!(fast.len(), oracle.len());
            for (a, b) in fast.atoms.iter().zip(&oracle.atoms) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            let wsum: f64 = fast.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gsf_hard_grid_endpoints_at_n256() {
        let n = 256f64;
        let base = n.powf(-0.25) * n.ln();
        assert!((1.25 * base - 1.733).abs() < 1e-3);
        assert!((1.5 * base - 2.079).abs() < 1e-3);
    }

    #[test]
    fn ic_baseline_single_component_data() {
        let kernel = gauss_kernel(1);
        let truth = MixingMeasure::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let ds = kernel.sample(&truth, 300, 77).unwrap();
        let config = SolverConfig {
            seed: 5,
            n_starts: 3,
            ..Default::default()
        };
        let (order, _) = select_order_ic(&kernel, &ds, 4, InfoCriterion::Bic, &config).unwrap();
        assert_eq!(order, 1);
    }

    #[test]
    fn gsf_selects_two_on_separated_clusters() {
        let kernel = gauss_kernel(1);
        let truth =
            MixingMeasure::new(vec![0.5, 0.5], vec![vec![-5.0], vec![5.0]]).unwrap();
        let ds = kernel.sample(&truth, 400, 13).unwrap();
        let penalty = RPenalty::with_defaults(PenaltyKind::Scad);
        let phi = PhiPenalty::default();
        let config = SolverConfig {
            seed: 2,
            n_starts: 3,
            ..Default::default()
        };
        let grid = default_grid(&kernel, &penalty, ds.len()).unwrap();
        let (order, measure, lambda, path) =
            select_order_gsf(&kernel, &ds, 8, &penalty, &phi, &grid, &config, true).unwrap();
        assert_eq!(order, 2, "path: {:?}", path.records.iter().map(|r| (r.lambda, r.order)).collect::<Vec<_>>());
        assert!(lambda > 0.0);
        // BIC-over-k baseline agrees on this instance
        let (ic_order, _) =
            select_order_ic(&kernel, &ds, 8, InfoCriterion::Bic, &config).unwrap();
        assert_eq!(ic_order, 2);
        let mut distinct: Vec<f64> = measure.atoms.iter().map(|a| a[0]).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert!((distinct[0] + 5.0).abs() < 0.5 && (distinct[1] - 5.0).abs() < 0.5);
    }

    #[test]
    fn path_extreme_lambda_fuses_everything() {
        let kernel = gauss_kernel(1);
        let truth =
            MixingMeasure::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]]).unwrap();
        let ds = kernel.sample(&truth, 100, 4).unwrap();
        let penalty = RPenalty::with_defaults(PenaltyKind::Scad);
        let phi = PhiPenalty::default();
        let config = SolverConfig {
            seed: 3,
            n_starts: 2,
            max_em_iters: 500,
            ..Default::default()
        };
        let base = default_grid(&kernel, &penalty, ds.len()).unwrap();
        let grid = GridSpec::new(10.0 * base.lambda_max, 20.0 * base.lambda_max, 2, GridSpacing::Log)
            .unwrap();
        let path = fit_path(&kernel, &ds, 4, &penalty, &phi, &grid, &config, true).unwrap();
        assert_eq!(path.records.last().unwrap().order, 1);
    }

    #[test]
    fn gsf_hard_selects_two_clusters() {
        let kernel = gauss_kernel(1);
        let truth =
            MixingMeasure::new(vec![0.5, 0.5], vec![vec![-6.0], vec![6.0]]).unwrap();
        let ds = kernel.sample(&truth, 300, 9).unwrap();
        let config = SolverConfig {
            seed: 11,
            n_starts: 3,
            ..Default::default()
        };
        let (order, measure, _) =
            select_order_gsf_hard(&kernel, &ds, 6, &PhiPenalty::default(), &config).unwrap();
        assert_eq!(order, 2, "atoms {:?}", measure.atoms);
    }

    #[test]
    fn gsf_hard_bound_one_returns_one() {
        let kernel = gauss_kernel(1);
        let truth = MixingMeasure::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let ds = kernel.sample(&truth, 50, 1).unwrap();
        let config = SolverConfig {
            seed: 11,
            n_starts: 1,
            ..Default::default()
        };
        let (order, _, _) =
            select_order_gsf_hard(&kernel, &ds, 1, &PhiPenalty::default(), &config).unwrap();
        assert_eq!(order, 1);
    }

    #[test]
    fn naive_two_components_matches_consecutive_objective() {
        let kernel = gauss_kernel(1);
        let truth =
            MixingMeasure::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]]).unwrap();
        let ds = kernel.sample(&truth, 120, 6).unwrap();
        let penalty = RPenalty::with_defaults(PenaltyKind::Scad);
        let phi = PhiPenalty::default();
        let config = SolverConfig {
            seed: 8,
            ..Default::default()
        };
        let init = initialize(&kernel, &ds, 2, 8, 1).unwrap().pop().unwrap();
        let lambda = 0.2;
        let gsf = fit_gsf(&kernel, &ds, 2, &penalty, lambda, &[], &phi, &config, &init, None)
            .unwrap();
        let naive = fit_naive_gsf(
            &kernel,
            &ds,
            2,
            &penalty,
            &phi,
            lambda,
            &[1.0],
            &config,
            &init,
            None,
        )
        .unwrap();
        assert!(
            (gsf.penalized_loglik - naive.penalized_loglik).abs() < 1e-4,
            "{} vs {}",
            gsf.penalized_loglik,
            naive.penalized_loglik
        );
    }

    #[test]
    fn naive_lambda_zero_matches_plain_em() {
        let kernel = gauss_kernel(1);
        let truth =
            MixingMeasure::new(vec![0.5, 0.5], vec![vec![-3.0], vec![3.0]]).unwrap();
        let ds = kernel.sample(&truth, 100, 14).unwrap();
        let phi = PhiPenalty::default();
        let config = SolverConfig {
            seed: 9,
            ..Default::default()
        };
        let init = initialize(&kernel, &ds, 2, 9, 1).unwrap().pop().unwrap();
        let penalty = RPenalty::with_defaults(PenaltyKind::Scad);
        let naive = fit_naive_gsf(
            &kernel, &ds, 2, &penalty, &phi, 0.0, &[1.0], &config, &init, None,
        )
        .unwrap();
        let plain = fit_plain_em(&kernel, &ds, 2, &phi, &config, &init).unwrap();
        assert!(
            (naive.loglik - plain.loglik).abs() < 1e-6,
            "{} vs {}",
            naive.loglik,
            plain.loglik
        );
    }

    #[test]
    fn misspecified_bound_saturates() {
        // three clear clusters but bound 2: the estimator should use both
        // available components
        let kernel = gauss_kernel(1);
        let truth = MixingMeasure::new(
            vec![1.0 / 3.0; 3],
            vec![vec![-8.0], vec![0.0], vec![8.0]],
        )
        .unwrap();
        let ds = kernel.sample(&truth, 300, 15).unwrap();
        let penalty = RPenalty::with_defaults(PenaltyKind::Scad);
        let phi = PhiPenalty::default();
        let config = SolverConfig {
            seed: 10,
            n_starts: 3,
            ..Default::default()
        };
        let grid = default_grid(&kernel, &penalty, ds.len()).unwrap();
        let (order, ..) =
            select_order_gsf(&kernel, &ds, 2, &penalty, &phi, &grid, &config, true).unwrap();
        assert_eq!(order, 2);
    }
}
