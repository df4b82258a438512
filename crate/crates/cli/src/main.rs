//! `gsf`: order selection and mixing-measure estimation for finite
//! mixtures, with a simulation benchmark harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gsf_cli::config::{resolve, resolve_opt, ConfigMap};
use gsf_cli::error::{exit_code, CliError};
use gsf_cli::registry::{registry, registry_lookup};
use gsf_cli::report::{report_to_string, ReportFormat};
use gsf_cli::runner::{run_replications, MethodSpec, RunConfig};
use gsf_cli::{io, Result};

use gsf_core::kernels::{CovarianceMode, GaussianLocationKernel, Identifiability, Kernel, MultinomialKernel};
use gsf_core::penalties::{PenaltyKind, PhiPenalty, RPenalty};
use gsf_core::selection::{
    best_record, default_grid, fit_path_from, select_order_gsf_hard, select_order_ic,
    select_order_naive, GridSpacing, GridSpec, InfoCriterion,
};
use gsf_core::solver::{best_plain_fit, fit_gsf, SolverConfig};
use gsf_core::Dataset;

#[derive(Parser)]
#[command(
    name = "gsf",
    version,
    about = "Simultaneous order selection and mixing-measure estimation for finite mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the penalized mixture at one tuning value
    Fit(FitArgs),
    /// Fit the full regularization path and emit it as CSV
    Path(PathArgs),
    /// Select the mixture order with full tuning
    Select(SelectArgs),
    /// Sample a dataset from a registered simulation model
    Simulate(SimulateArgs),
    /// Run replicated order-selection benchmarks
    Bench(BenchArgs),
    /// Wasserstein distances between two mixing measures
    Eval(EvalArgs),
    /// List the registered simulation models
    Models,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Config file (key=value lines or a JSON object); flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Kernel family: gaussian or multinomial
    #[arg(long)]
    kernel: Option<String>,
    /// Multinomial trial count (inferred from row sums when omitted)
    #[arg(long)]
    trials: Option<u64>,
    /// Gaussian covariance: identity, estimate, or file:PATH (CSV matrix)
    #[arg(long)]
    covariance: Option<String>,
    /// Fuse penalty: scad, mcp, or alasso
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    scad_a: Option<f64>,
    #[arg(long)]
    mcp_a: Option<f64>,
    #[arg(long)]
    alasso_beta: Option<f64>,
    /// Proportion-penalty constant
    #[arg(long)]
    phi_c: Option<f64>,
    #[arg(long)]
    eps_inner: Option<f64>,
    #[arg(long)]
    delta_outer: Option<f64>,
    #[arg(long)]
    max_em_iters: Option<usize>,
    #[arg(long)]
    max_pgd_iters: Option<usize>,
    /// Number of random initializations
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on the number of components
    #[arg(long)]
    k_bound: Option<usize>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    grid_count: Option<usize>,
    /// Grid spacing: log or linear
    #[arg(long)]
    grid_spacing: Option<String>,
    /// Fit every tuning value from the preliminary fit instead of warm
    /// starting from the previous one
    #[arg(long)]
    no_warm_start: bool,
    /// First CSV line is a header
    #[arg(long)]
    header: bool,
    /// Worker threads for replications (0: one per core)
    #[arg(long)]
    jobs: Option<usize>,
    /// Output path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Tuning value lambda
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PathArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Method: gsf, naive-gsf, gsf-hard, aic, or bic
    #[arg(long)]
    method: Option<String>,
    /// Also write the regularization path CSV here
    #[arg(long)]
    path_out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Registered model id (see `gsf models`)
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: Option<usize>,
    /// Replication count
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods (gsf-scad, gsf-mcp, gsf-alasso, naive-gsf,
    /// gsf-hard, aic, bic)
    #[arg(long)]
    methods: Option<String>,
    /// Report format: csv or json
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// First measure JSON file
    #[arg(long)]
    measure_a: PathBuf,
    /// Second measure JSON file
    #[arg(long)]
    measure_b: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

/// Flag/config/default resolution shared by the data-driven subcommands.
struct Settings {
    kernel_id: String,
    trials: Option<u64>,
    covariance: String,
    penalty: PenaltyKind,
    scad_a: f64,
    mcp_a: f64,
    alasso_beta: f64,
    phi_c: f64,
    solver: SolverConfig,
    k_bound: usize,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    grid_count: usize,
    grid_spacing: GridSpacing,
    warm_start: bool,
    header: bool,
    jobs: usize,
    output: Option<PathBuf>,
}

impl Settings {
    fn from(common: &CommonArgs) -> Result<Self> {
        let cfg = match &common.config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::default(),
        };
        let penalty_name = common
            .penalty
            .clone()
            .or_else(|| cfg.get_string("penalty"))
            .unwrap_or_else(|| "scad".to_string());
        let penalty = match penalty_name.as_str() {
            "scad" => PenaltyKind::Scad,
            "mcp" => PenaltyKind::Mcp,
            "alasso" => PenaltyKind::Alasso,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown penalty `{other}` (expected scad, mcp, alasso)"
                )))
            }
        };
        let spacing_name = common
            .grid_spacing
            .clone()
            .or_else(|| cfg.get_string("grid-spacing"))
            .unwrap_or_else(|| "log".to_string());
        let grid_spacing = match spacing_name.as_str() {
            "log" => GridSpacing::Log,
            "linear" => GridSpacing::Linear,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown grid spacing `{other}` (expected log or linear)"
                )))
            }
        };
        let warm_start = if common.no_warm_start {
            false
        } else {
            resolve(None, &cfg, "warm-start", true)?
        };
        let solver = SolverConfig {
            eps_inner: resolve(common.eps_inner, &cfg, "eps-inner", 1e-5)?,
            delta_outer: resolve(common.delta_outer, &cfg, "delta-outer", 1e-8)?,
            max_em_iters: resolve(common.max_em_iters, &cfg, "max-em-iters", 2500)?,
            max_pgd_iters: resolve(common.max_pgd_iters, &cfg, "max-pgd-iters", 1000)?,
            rho0: 1.0,
            rho_growth: 2.0,
            n_starts: resolve(common.starts, &cfg, "starts", 5)?,
            seed: resolve(common.seed, &cfg, "seed", 0)?,
        };
        Ok(Settings {
            kernel_id: common
                .kernel
                .clone()
                .or_else(|| cfg.get_string("kernel"))
                .unwrap_or_else(|| "gaussian".to_string()),
            trials: resolve_opt(common.trials, &cfg, "trials")?,
            covariance: common
                .covariance
                .clone()
                .or_else(|| cfg.get_string("covariance"))
                .unwrap_or_else(|| "estimate".to_string()),
            penalty,
            scad_a: resolve(common.scad_a, &cfg, "scad-a", 3.7)?,
            mcp_a: resolve(common.mcp_a, &cfg, "mcp-a", 3.0)?,
            alasso_beta: resolve(common.alasso_beta, &cfg, "alasso-beta", 2.0)?,
            phi_c: resolve(common.phi_c, &cfg, "phi-c", 3.0)?,
            solver,
            k_bound: resolve(common.k_bound, &cfg, "k-bound", 12)?,
            lambda_min: resolve_opt(common.lambda_min, &cfg, "lambda-min")?,
            lambda_max: resolve_opt(common.lambda_max, &cfg, "lambda-max")?,
            grid_count: resolve(common.grid_count, &cfg, "grid-count", 40)?,
            grid_spacing,
            warm_start,
            header: common.header || resolve(None, &cfg, "header", false)?,
            jobs: resolve(common.jobs, &cfg, "jobs", 0)?,
            output: common.output.clone(),
        })
    }

    fn r_penalty(&self) -> Result<RPenalty> {
        Ok(match self.penalty {
            PenaltyKind::Scad => RPenalty::scad(self.scad_a)?,
            PenaltyKind::Mcp => RPenalty::mcp(self.mcp_a)?,
            PenaltyKind::Alasso => RPenalty::alasso(self.alasso_beta)?,
        })
    }

    fn phi(&self) -> Result<PhiPenalty> {
        Ok(PhiPenalty::new(self.phi_c)?)
    }

    fn load_dataset(&self, path: &Path) -> Result<Dataset> {
        io::ingest_csv(path, &self.kernel_id, self.header, self.trials)
    }

    fn build_kernel(&self, dataset: &Dataset) -> Result<Kernel> {
        match self.kernel_id.as_str() {
            "gaussian" => {
                let d = dataset.dim();
                match self.covariance.as_str() {
                    "identity" => Ok(Kernel::Gaussian(GaussianLocationKernel::identity(
                        d,
                        CovarianceMode::Known,
                    ))),
                    "estimate" => Ok(Kernel::Gaussian(GaussianLocationKernel::identity(
                        d,
                        CovarianceMode::Estimated,
                    ))),
                    other => match other.strip_prefix("file:") {
                        Some(path) => {
                            let rows = io::read_covariance_csv(Path::new(path))?;
                            if rows.len() != d {
                                return Err(CliError::Usage(format!(
                                    "covariance is {}x{} but data has dimension {d}",
                                    rows.len(),
                                    rows.len()
                                )));
                            }
                            Ok(Kernel::Gaussian(GaussianLocationKernel::new(
                                rows,
                                CovarianceMode::Known,
                            )?))
                        }
                        None => Err(CliError::Usage(format!(
                            "unknown covariance `{other}` (expected identity, estimate, file:PATH)"
                        ))),
                    },
                }
            }
            "multinomial" => {
                let trials = dataset.trials.ok_or_else(|| {
                    CliError::Usage("multinomial data needs a trial count".into())
                })?;
                Ok(Kernel::Multinomial(MultinomialKernel::new(
                    trials,
                    dataset.dim(),
                )?))
            }
            other => Err(CliError::Usage(format!(
                "unknown kernel `{other}` (expected gaussian or multinomial)"
            ))),
        }
    }

    fn grid(&self, kernel: &Kernel, penalty: &RPenalty, n: usize) -> Result<GridSpec> {
        let (mut lo, mut hi) = match (self.lambda_min, self.lambda_max) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => {
                let base = default_grid(kernel, penalty, n)?;
                (
                    self.lambda_min.unwrap_or(base.lambda_min),
                    self.lambda_max.unwrap_or(base.lambda_max),
                )
            }
        };
        if self.grid_spacing == GridSpacing::Log && lo <= 0.0 {
            lo = 1e-4;
            hi = hi.max(2e-4);
        }
        Ok(GridSpec::new(lo, hi, self.grid_count, self.grid_spacing)?)
    }

    fn warn_identifiability(&self, kernel: &Kernel) {
        if kernel.check_strong_identifiability(self.k_bound) == Identifiability::Violated {
            if let Kernel::Multinomial(m) = kernel {
                eprintln!(
                    "warning: strong identifiability needs 3K-1 <= M, got K={} with M={}",
                    self.k_bound,
                    m.trials()
                );
            }
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let dataset = settings.load_dataset(&args.data)?;
    let kernel = settings.build_kernel(&dataset)?;
    settings.warn_identifiability(&kernel);
    let penalty = settings.r_penalty()?;
    let phi = settings.phi()?;
    if args.lambda < 0.0 {
        return Err(CliError::Usage("lambda must be nonnegative".into()));
    }
    let tilde = best_plain_fit(&kernel, &dataset, settings.k_bound, &phi, &settings.solver)?;
    let tilde_norms: Vec<f64> = gsf_core::selection::eta_norms(&tilde.measure)
        .into_iter()
        .map(|v| v.max(1e-6))
        .collect();
    let fit = fit_gsf(
        &kernel,
        &dataset,
        settings.k_bound,
        &penalty,
        args.lambda,
        &tilde_norms,
        &phi,
        &settings.solver,
        &tilde.measure,
        tilde.covariance.as_ref(),
    )?;
    let order = gsf_core::selection::fitted_order(&fit.measure);
    let out = json!({
        "lambda": args.lambda,
        "order": order,
        "weights": fit.measure.weights,
        "atoms": fit.measure.atoms,
        "loglik": fit.loglik,
        "penalized_loglik": fit.penalized_loglik,
        "bic": gsf_core::selection::bic_of(&kernel, fit.loglik, dataset.len(), order),
        "converged": fit.converged,
        "iterations": fit.iterations,
    });
    io::write_output(
        settings.output.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&out).unwrap()),
    )
}

fn build_path(
    settings: &Settings,
    dataset: &Dataset,
    kernel: &Kernel,
) -> Result<gsf_core::RegularizationPath> {
    let penalty = settings.r_penalty()?;
    let phi = settings.phi()?;
    let grid = settings.grid(kernel, &penalty, dataset.len())?;
    let tilde = best_plain_fit(kernel, dataset, settings.k_bound, &phi, &settings.solver)?;
    let path = fit_path_from(
        kernel,
        dataset,
        settings.k_bound,
        &penalty,
        &phi,
        &grid,
        &settings.solver,
        settings.warm_start,
        &tilde,
    )?;
    if path.tilde_floored > 0 {
        eprintln!(
            "warning: {} preliminary difference norms were (near) zero and were floored at 1e-6",
            path.tilde_floored
        );
    }
    Ok(path)
}

fn cmd_path(args: &PathArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let dataset = settings.load_dataset(&args.data)?;
    let kernel = settings.build_kernel(&dataset)?;
    settings.warn_identifiability(&kernel);
    let path = build_path(&settings, &dataset, &kernel)?;
    io::write_output(settings.output.as_deref(), &path.to_csv())
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let dataset = settings.load_dataset(&args.data)?;
    let kernel = settings.build_kernel(&dataset)?;
    settings.warn_identifiability(&kernel);
    let method = args.method.clone().unwrap_or_else(|| "gsf".to_string());
    let phi = settings.phi()?;
    let n = dataset.len();

    let (order, measure, lambda, path) = match method.as_str() {
        "gsf" => {
            let path = build_path(&settings, &dataset, &kernel)?;
            let best = best_record(&path)?;
            (
                best.order,
                best.measure.clone(),
                Some(best.lambda),
                Some(path),
            )
        }
        "naive-gsf" => {
            let penalty = settings.r_penalty()?;
            let grid = settings.grid(&kernel, &penalty, n)?;
            let (order, measure, lambda, path) = select_order_naive(
                &kernel,
                &dataset,
                settings.k_bound,
                &penalty,
                &phi,
                &grid,
                &settings.solver,
                settings.warm_start,
            )?;
            (order, measure, Some(lambda), Some(path))
        }
        "gsf-hard" => {
            let (order, measure, lambda) = select_order_gsf_hard(
                &kernel,
                &dataset,
                settings.k_bound,
                &phi,
                &settings.solver,
            )?;
            (order, measure, Some(lambda), None)
        }
        "aic" | "bic" => {
            let criterion = if method == "aic" {
                InfoCriterion::Aic
            } else {
                InfoCriterion::Bic
            };
            let (order, measure) = select_order_ic(
                &kernel,
                &dataset,
                settings.k_bound,
                criterion,
                &settings.solver,
            )?;
            (order, measure, None, None)
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method `{other}` (expected gsf, naive-gsf, gsf-hard, aic, bic)"
            )))
        }
    };

    let loglik = gsf_core::solver::loglik_at(&kernel, &dataset, &measure, None)
        .unwrap_or(f64::NAN);
    let out = json!({
        "method": method,
        "order": order,
        "lambda": lambda,
        "weights": measure.weights,
        "atoms": measure.atoms,
        "bic": gsf_core::selection::bic_of(&kernel, loglik, n, order),
        "loglik": loglik,
    });
    if let Some(path_out) = &args.path_out {
        match &path {
            Some(p) => io::write_output(Some(path_out), &p.to_csv())?,
            None => eprintln!("note: method `{method}` has no regularization path to write"),
        }
    }
    io::write_output(
        settings.output.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&out).unwrap()),
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let model = registry_lookup(&args.model)?;
    let n = args.n.unwrap_or(200);
    let kernel = model.generator_kernel()?;
    let dataset = kernel.sample(&model.measure, n, settings.solver.seed)?;
    io::write_output(settings.output.as_deref(), &io::dataset_to_csv(&dataset))
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let n = args.n.unwrap_or(200);
    let reps = args.reps.unwrap_or(100);
    let mut config = RunConfig::new(args.model.clone(), n, reps, settings.k_bound);
    let method_list = args
        .methods
        .clone()
        .unwrap_or_else(|| "gsf-scad,bic".to_string());
    config.methods = method_list
        .split(',')
        .map(|tok| MethodSpec::parse(tok.trim(), settings.penalty))
        .collect::<Result<Vec<_>>>()?;
    config.seed = settings.solver.seed;
    config.jobs = settings.jobs;
    config.trials_override = settings.trials;
    config.known_identity_covariance = settings.covariance == "identity";
    config.solver = settings.solver.clone();
    config.phi = settings.phi()?;
    config.scad_a = settings.scad_a;
    config.mcp_a = settings.mcp_a;
    config.alasso_beta = settings.alasso_beta;
    config.warm_start = settings.warm_start;
    if let (Some(lo), Some(hi)) = (settings.lambda_min, settings.lambda_max) {
        config.grid = Some(GridSpec::new(
            lo,
            hi,
            settings.grid_count,
            settings.grid_spacing,
        )?);
    }
    let outcome = run_replications(&config)?;
    if outcome.failed_replications > 0 {
        eprintln!(
            "warning: {} of {} replications failed",
            outcome.failed_replications, outcome.replications
        );
    }
    let format: ReportFormat = args
        .format
        .clone()
        .unwrap_or_else(|| "csv".to_string())
        .parse()?;
    io::write_output(
        settings.output.as_deref(),
        &report_to_string(&outcome.report, format)?,
    )
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let settings = Settings::from(&args.common)?;
    let a = io::read_measure(&args.measure_a)?;
    let b = io::read_measure(&args.measure_b)?;
    let w1 = gsf_core::metrics::wasserstein(&a, &b, 1)?;
    let w2 = gsf_core::metrics::wasserstein(&a, &b, 2)?;
    let out = json!({ "w1": w1, "w2": w2 });
    io::write_output(settings.output.as_deref(), &format!("{out}\n"))
}

fn cmd_models() -> Result<()> {
    let mut out = String::from("id,family,order,dim\n");
    for m in registry() {
        let family = match &m.family {
            gsf_cli::registry::FamilySpec::Gaussian { .. } => "gaussian",
            gsf_cli::registry::FamilySpec::Multinomial { .. } => "multinomial",
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.id,
            family,
            m.true_order(),
            m.dim()
        ));
    }
    print!("{out}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Path(args) => cmd_path(args),
        Command::Select(args) => cmd_select(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Models => cmd_models(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
