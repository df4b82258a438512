//! Replication runner: samples datasets from a registered model, runs each
//! requested selection method, and aggregates selected orders. Replications
//! are seeded independently so results do not depend on the parallelism
//! degree.

use rayon::prelude::*;

use gsf_core::metrics::{aggregate_selection, SelectionReport};
use gsf_core::penalties::{PenaltyKind, PhiPenalty, RPenalty};
use gsf_core::selection::{
    default_grid, select_order_gsf, select_order_gsf_hard, select_order_ic, select_order_naive,
    GridSpec, InfoCriterion,
};
use gsf_core::solver::{derive_seed, SolverConfig};
use gsf_core::{Dataset, Kernel};

use crate::error::{CliError, Result};
use crate::registry::registry_lookup;

/// One selection method to benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Gsf(PenaltyKind),
    NaiveGsf(PenaltyKind),
    GsfHard,
    Aic,
    Bic,
}

impl MethodSpec {
    /// Parses a method token; bare `gsf`/`naive-gsf` take the penalty from
    /// the surrounding flags.
    pub fn parse(token: &str, default_penalty: PenaltyKind) -> Result<Self> {
        Ok(match token {
            "gsf" => MethodSpec::Gsf(default_penalty),
            "gsf-scad" => MethodSpec::Gsf(PenaltyKind::Scad),
            "gsf-mcp" => MethodSpec::Gsf(PenaltyKind::Mcp),
            "gsf-alasso" => MethodSpec::Gsf(PenaltyKind::Alasso),
            "naive-gsf" => MethodSpec::NaiveGsf(default_penalty),
            "gsf-hard" => MethodSpec::GsfHard,
            "aic" => MethodSpec::Aic,
            "bic" => MethodSpec::Bic,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown method `{other}` (expected gsf, gsf-scad, gsf-mcp, gsf-alasso, naive-gsf, gsf-hard, aic, bic)"
                )))
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            MethodSpec::Gsf(k) => format!("gsf-{k}"),
            MethodSpec::NaiveGsf(k) => format!("naive-gsf-{k}"),
            MethodSpec::GsfHard => "gsf-hard".into(),
            MethodSpec::Aic => "aic".into(),
            MethodSpec::Bic => "bic".into(),
        }
    }
}

/// Everything one benchmark run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_id: String,
    pub n: usize,
    pub replications: usize,
    pub k_bound: usize,
    pub methods: Vec<MethodSpec>,
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub trials_override: Option<u64>,
    /// Fit Gaussian models with the covariance pinned to the identity
    /// instead of estimating it.
    pub known_identity_covariance: bool,
    pub solver: SolverConfig,
    pub phi: PhiPenalty,
    /// Penalty shapes used when a method resolves to that family.
    pub scad_a: f64,
    pub mcp_a: f64,
    pub alasso_beta: f64,
    /// Grid override; by default each penalty gets its family grid.
    pub grid: Option<GridSpec>,
    pub warm_start: bool,
}

impl RunConfig {
    pub fn new(model_id: impl Into<String>, n: usize, replications: usize, k_bound: usize) -> Self {
        Self {
            model_id: model_id.into(),
            n,
            replications,
            k_bound,
            methods: vec![MethodSpec::Gsf(PenaltyKind::Scad)],
            seed: 0,
            jobs: 0,
            trials_override: None,
            known_identity_covariance: false,
            solver: SolverConfig::default(),
            phi: PhiPenalty::default(),
            scad_a: 3.7,
            mcp_a: 3.0,
            alasso_beta: 2.0,
            grid: None,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.n == 0 {
            return Err(CliError::Usage(
                "replications and sample size must be positive".into(),
            ));
        }
        if self.k_bound == 0 {
            return Err(CliError::Usage("k-bound must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Usage("at least one method required".into()));
        }
        Ok(())
    }

    fn penalty(&self, kind: PenaltyKind) -> gsf_core::Result<RPenalty> {
        match kind {
            PenaltyKind::Scad => RPenalty::scad(self.scad_a),
            PenaltyKind::Mcp => RPenalty::mcp(self.mcp_a),
            PenaltyKind::Alasso => RPenalty::alasso(self.alasso_beta),
        }
    }
}

/// Outcome of a replication run: the aggregate report plus failure counts.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: SelectionReport,
    /// Replications where at least one method failed numerically.
    pub failed_replications: usize,
    pub replications: usize,
}

/// Runs one method on one dataset.
pub fn run_method(
    method: MethodSpec,
    kernel: &Kernel,
    dataset: &Dataset,
    config: &RunConfig,
    solver: &SolverConfig,
) -> gsf_core::Result<usize> {
    match method {
        MethodSpec::Gsf(kind) => {
            let penalty = config.penalty(kind)?;
            let grid = match &config.grid {
                Some(g) => g.clone(),
                None => default_grid(kernel, &penalty, dataset.len())?,
            };
            let (order, ..) = select_order_gsf(
                kernel,
                dataset,
                config.k_bound,
                &penalty,
                &config.phi,
                &grid,
                solver,
                config.warm_start,
            )?;
            Ok(order)
        }
        MethodSpec::NaiveGsf(kind) => {
            let penalty = config.penalty(kind)?;
            let grid = match &config.grid {
                Some(g) => g.clone(),
                None => default_grid(kernel, &penalty, dataset.len())?,
            };
            let (order, ..) = select_order_naive(
                kernel,
                dataset,
                config.k_bound,
                &penalty,
                &config.phi,
                &grid,
                solver,
                config.warm_start,
            )?;
            Ok(order)
        }
        MethodSpec::GsfHard => {
            let (order, ..) =
                select_order_gsf_hard(kernel, dataset, config.k_bound, &config.phi, solver)?;
            Ok(order)
        }
        MethodSpec::Aic => {
            let (order, _) =
                select_order_ic(kernel, dataset, config.k_bound, InfoCriterion::Aic, solver)?;
            Ok(order)
        }
        MethodSpec::Bic => {
            let (order, _) =
                select_order_ic(kernel, dataset, config.k_bound, InfoCriterion::Bic, solver)?;
            Ok(order)
        }
    }
}

/// Runs all replications. Per-replication seeds derive from the master
/// seed, and results reduce in replication order, so the report is
/// byte-identical for any worker count. Individual failures are recorded
/// and tolerated up to 10% of replications.
pub fn run_replications(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let model = registry_lookup(&config.model_id)?;
    let gen_kernel = model.generator_kernel()?;
    let fit_kernel =
        model.fitting_kernel(config.trials_override, config.known_identity_covariance)?;
    let gen_measure = model.measure.clone();

    let one_rep = |rep: usize| -> Vec<(String, std::result::Result<usize, String>)> {
        let rep_seed = derive_seed(config.seed, rep as u64);
        let dataset = match gen_kernel.sample(&gen_measure, config.n, rep_seed) {
            Ok(ds) => ds,
            Err(e) => {
                return config
                    .methods
                    .iter()
                    .map(|m| (m.label(), Err(e.to_string())))
                    .collect()
            }
        };
        config
            .methods
            .iter()
            .enumerate()
            .map(|(mi, method)| {
                let solver = SolverConfig {
                    seed: derive_seed(rep_seed, mi as u64),
                    ..config.solver.clone()
                };
                let out = run_method(*method, &fit_kernel, &dataset, config, &solver)
                    .map_err(|e| e.to_string());
                (method.label(), out)
            })
            .collect()
    };

    let per_rep: Vec<Vec<(String, std::result::Result<usize, String>)>> = if config.jobs == 1 {
        (0..config.replications).map(one_rep).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.replications).into_par_iter().map(one_rep).collect())
    };

    let mut results: Vec<(String, usize)> = Vec::new();
    let mut failed_replications = 0;
    for rep_results in &per_rep {
        let mut rep_failed = false;
        for (label, outcome) in rep_results {
            match outcome {
                Ok(order) => results.push((label.clone(), *order)),
                Err(_) => rep_failed = true,
            }
        }
        if rep_failed {
            failed_replications += 1;
        }
    }
    if failed_replications * 10 > config.replications {
        return Err(CliError::TooManyFailures {
            failed: failed_replications,
            total: config.replications,
        });
    }
    let report = aggregate_selection(&results, model.true_order());
    Ok(RunOutcome {
        report,
        failed_replications,
        replications: config.replications,
    })
}
