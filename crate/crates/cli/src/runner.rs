//! Orchestration of the subcommands over (scheme, α, Δt, chain) cells.
//!
//! Chains run on a rayon pool. Every chain draws from its own stream
//! `RngStream::new(seed, chain_index)`, and results are gathered back in job
//! order before any statistic is formed, so the output does not depend on the
//! number of threads.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use nrl_core::estimators::{
    batch_means_variance, ensemble_asymptotic_variance, mse, BatchMeansState, ChainAccumulator, EstimatorError,
    VarianceReport,
};
use nrl_core::gaussian::{
    asymptotic_variance_quadratic, clt_asymptotic_variance, variance_limit, variance_lower_bound, GaussianError,
};
use nrl_core::integrators::{run_chain, IntegratorError, RngStream, Scheme};
use nrl_core::reference::{expectation_2d, QuadratureSpec, ReferenceError};

use crate::config::{ConfigError, Experiment, ObservableSpec, RunLength};
use crate::output::{ResultRow, Table};

pub const THREADS_ENV: &str = "NRL_THREADS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RunError>;

fn invalid(issues: Vec<String>) -> Result<()> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(issues).into())
    }
}

/// NRL_THREADS wins over the config; otherwise rayon's default.
pub fn thread_count(configured: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => {
                Err(ConfigError::Invalid(vec![format!("{THREADS_ENV}: expected a positive integer, got {v:?}")]).into())
            }
        },
        Err(_) => Ok(configured),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(threads)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(job))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    scheme: Scheme,
    alpha: f64,
    dt: f64,
}

#[derive(Debug, Clone)]
struct ChainOutcome {
    mean: Option<f64>,
    batches: Option<BatchMeansState>,
    accepted: u64,
    proposals: u64,
    blown: bool,
    seconds: f64,
}

fn run_cell_chain(exp: &Experiment, cell: Cell, chain: usize, n_steps: u64) -> Result<ChainOutcome> {
    let observable = exp
        .observable
        .as_ref()
        .expect("observable checked before dispatch")
        .as_observable();
    let perturbation = exp.perturbation.with_alpha(cell.alpha);
    let burn_in = (exp.burn_in_fraction * n_steps as f64).floor() as u64;
    let mut acc = ChainAccumulator::new(observable.as_ref(), burn_in);
    if exp.n_chains == 1 {
        acc = acc.with_batches(BatchMeansState::for_samples(n_steps - burn_in, exp.batch_count));
    }
    let mut rng = RngStream::new(exp.seed, chain as u64);
    let start = Instant::now();
    let result = run_chain(
        &exp.initial,
        cell.scheme,
        &exp.target,
        &perturbation,
        cell.dt,
        n_steps,
        &mut rng,
        &mut [&mut acc],
    )?;
    let blown = !result.is_complete();
    Ok(ChainOutcome {
        mean: (!blown && acc.average.count > 0).then_some(acc.average.mean),
        batches: if blown { None } else { acc.batches },
        accepted: result.accepted,
        proposals: result.proposals,
        blown,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row from the chains of a cell. A cell with any blowup keeps only its
/// bookkeeping columns.
fn summarize(
    exp: &Experiment,
    cell: Cell,
    label: &str,
    n_steps: u64,
    chains: &[ChainOutcome],
    reference: Option<f64>,
) -> Result<ResultRow> {
    let blowups = chains.iter().filter(|c| c.blown).count();
    let proposals: u64 = chains.iter().map(|c| c.proposals).sum();
    let accepted: u64 = chains.iter().map(|c| c.accepted).sum();
    let mut row = ResultRow {
        alpha: cell.alpha,
        dt: cell.dt,
        scheme: label.to_string(),
        method: None,
        report: None,
        bias: None,
        mse: None,
        relative_mse: None,
        acceptance_rate: (proposals > 0).then(|| accepted as f64 / proposals as f64),
        blowups,
        gradient_evals: n_steps * cell.scheme.gradient_cost(),
        wall_seconds: chains.iter().map(|c| c.seconds).sum(),
    };
    if blowups > 0 {
        return Ok(row);
    }
    let burn_in = (exp.burn_in_fraction * n_steps as f64).floor() as u64;
    let means: Vec<f64> = chains.iter().filter_map(|c| c.mean).collect();
    let report: Option<VarianceReport> = if chains.len() >= 2 {
        let total_time = (n_steps - burn_in) as f64 * cell.dt;
        Some(ensemble_asymptotic_variance(&means, total_time)?)
    } else {
        chains[0]
            .batches
            .as_ref()
            .and_then(|b| b.mean().map(|m| batch_means_variance(b, m, cell.dt)))
            .and_then(|r| r.ok())
    };
    if let Some(r) = reference {
        let m = mse(&means.iter().copied().map(Some).collect::<Vec<_>>(), r)?;
        row.mse = m.mse;
        row.relative_mse = m.relative_mse;
        row.bias = report.as_ref().map(|rep| rep.estimate - r);
    }
    row.method = report.as_ref().map(|r| r.method.name());
    row.report = report;
    Ok(row)
}

/// Runs every cell with `n_chains` chains each and returns rows in cell order.
fn run_cells(
    exp: &Experiment,
    cells: &[(Cell, String)],
    length: RunLength,
    reference: Option<f64>,
) -> Result<Vec<ResultRow>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..exp.n_chains).map(move |k| (c, k)))
        .collect();
    let outcomes: Vec<Result<ChainOutcome>> = with_pool(exp.threads, || {
        jobs.par_iter()
            .map(|&(c, k)| {
                let cell = cells[c].0;
                run_cell_chain(exp, cell, k, length.steps(cell.scheme))
            })
            .collect()
    })?;
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    cells
        .iter()
        .zip(outcomes.chunks(exp.n_chains))
        .map(|((cell, label), chains)| summarize(exp, *cell, label, length.steps(cell.scheme), chains, reference))
        .collect()
}

/// π(f) when it is known without quadrature.
fn exact_reference(exp: &Experiment) -> Option<f64> {
    if let Some(r) = exp.reference {
        return Some(r);
    }
    match (exp.target_name.as_str(), exp.observable.as_ref()?) {
        ("standard_gaussian", ObservableSpec::Quadratic(q)) => Some(q.gaussian_mean()),
        ("standard_gaussian", ObservableSpec::NormSquared) => Some(exp.target.dim() as f64),
        ("standard_gaussian", ObservableSpec::Linear(_)) => Some(0.0),
        _ => None,
    }
}

/// π(f) from the config, a closed form, or two-dimensional quadrature.
pub fn resolve_reference(exp: &Experiment) -> Result<f64> {
    if let Some(r) = exact_reference(exp) {
        return Ok(r);
    }
    if exp.target.dim() != 2 {
        return Err(ConfigError::Invalid(vec![format!(
            "reference: no reference value for the {}-dimensional target {}; set `reference` \
             explicitly, or use sweep-alpha, which needs none",
            exp.target.dim(),
            exp.target_name
        )])
        .into());
    }
    let f = exp.observable.as_ref().expect("observable checked").as_observable();
    Ok(expectation_2d(&exp.target, f.as_ref(), &QuadratureSpec::default())?.value)
}

fn sampling_issues(exp: &Experiment, need_schemes: bool) -> Vec<String> {
    let mut issues = Vec::new();
    if exp.observable.is_none() {
        issues.push("observable: required".to_string());
    }
    if exp.alphas.is_empty() {
        issues.push("alphas: must not be empty".to_string());
    }
    if exp.dts.is_empty() {
        issues.push("dts: must not be empty".to_string());
    }
    if need_schemes && exp.schemes.is_empty() {
        issues.push("scheme: required (scheme or schemes)".to_string());
    }
    if exp.length.is_none() {
        issues.push("n_steps: give exactly one of n_steps and gradient_budget".to_string());
    }
    issues
}

fn check_length(exp: &Experiment, schemes: &[Scheme], issues: &mut Vec<String>) {
    let Some(length) = exp.length else { return };
    let burn = |n: u64| (exp.burn_in_fraction * n as f64).floor() as u64;
    for s in schemes {
        let n = length.steps(*s);
        if n - burn(n) == 0 {
            issues.push(format!("n_steps: no samples remain after burn-in for {}", s.name()));
        }
    }
}

pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
}

impl SweepOutput {
    /// True when every cell saw at least one blowup.
    pub fn all_blown(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.blowups > 0)
    }

    pub fn table(&self) -> Table {
        Table::results(&self.rows)
    }
}

/// Variance against α: one row per (α, Δt, scheme).
pub fn sweep_alpha(exp: &Experiment) -> Result<SweepOutput> {
    let mut issues = sampling_issues(exp, true);
    check_length(exp, &exp.schemes, &mut issues);
    invalid(issues)?;
    let mut cells = Vec::new();
    for &alpha in &exp.alphas {
        for &dt in &exp.dts {
            for &scheme in &exp.schemes {
                cells.push((Cell { scheme, alpha, dt }, scheme.name().to_string()));
            }
        }
    }
    let rows = run_cells(exp, &cells, exp.length.expect("checked"), exact_reference(exp))?;
    Ok(SweepOutput { rows })
}

/// MSE against Δt at a fixed gradient budget: one row per (scheme, α, Δt),
/// plus reversible MALA rows when requested.
pub fn sweep_dt(exp: &Experiment) -> Result<SweepOutput> {
    let mut issues = sampling_issues(exp, true);
    if !matches!(exp.length, Some(RunLength::Budget(_)) | None) {
        issues.push("gradient_budget: sweep-dt compares at a fixed gradient budget; n_steps is not accepted".into());
    }
    let mut schemes = exp.schemes.clone();
    let add_baseline = exp.include_mala_baseline && !schemes.contains(&Scheme::Mala);
    if add_baseline {
        schemes.push(Scheme::Mala);
    }
    check_length(exp, &schemes, &mut issues);
    invalid(issues)?;
    let reference = resolve_reference(exp)?;
    let mut cells = Vec::new();
    for &scheme in &exp.schemes {
        for &alpha in &exp.alphas {
            for &dt in &exp.dts {
                cells.push((Cell { scheme, alpha, dt }, scheme.name().to_string()));
            }
        }
    }
    if add_baseline {
        for &dt in &exp.dts {
            cells.push((
                Cell {
                    scheme: Scheme::Mala,
                    alpha: 0.0,
                    dt,
                },
                "mala".to_string(),
            ));
        }
    }
    let rows = run_cells(exp, &cells, exp.length.expect("checked"), Some(reference))?;
    Ok(SweepOutput { rows })
}

/// Metropolis chains with the perturbed proposal across α. The α = 0 row is
/// plain MALA and is labelled so.
pub fn mh_study(exp: &Experiment) -> Result<SweepOutput> {
    let mut issues = sampling_issues(exp, false);
    if exp.schemes.iter().any(|s| *s != Scheme::MalaNonrevProposal) {
        issues.push("scheme: mh-study always runs mala_nonrev_proposal; omit scheme or set it to that".into());
    }
    check_length(exp, &[Scheme::MalaNonrevProposal], &mut issues);
    invalid(issues)?;
    let reference = resolve_reference(exp)?;
    let mut cells = Vec::new();
    for &alpha in &exp.alphas {
        for &dt in &exp.dts {
            let label = if alpha == 0.0 {
                "mala"
            } else {
                Scheme::MalaNonrevProposal.name()
            };
            cells.push((
                Cell {
                    scheme: Scheme::MalaNonrevProposal,
                    alpha,
                    dt,
                },
                label.to_string(),
            ));
        }
    }
    let rows = run_cells(exp, &cells, exp.length.expect("checked"), Some(reference))?;
    Ok(SweepOutput { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRow {
    pub alpha: f64,
    pub sigma2: f64,
    pub sigma2_clt: f64,
    pub limit: f64,
    pub lower_bound: f64,
}

/// Closed-form variance curve for a quadratic observable of the standard
/// Gaussian under a linear perturbation.
pub fn analytic(exp: &Experiment) -> Result<Vec<AnalyticRow>> {
    let mut issues = Vec::new();
    if exp.target_name != "standard_gaussian" {
        issues.push(format!(
            "target.name: analytic curves need the standard_gaussian target, got {}",
            exp.target_name
        ));
    }
    let q = match exp.observable.as_ref() {
        Some(ObservableSpec::Quadratic(q)) => Some(q),
        _ => {
            issues.push("observable: analytic curves need the quadratic observable".to_string());
            None
        }
    };
    let j = exp.generator();
    if j.is_none() {
        issues.push("perturbation: analytic curves need a constant generator J".to_string());
    }
    if exp.alphas.is_empty() {
        issues.push("alphas: must not be empty".to_string());
    }
    invalid(issues)?;
    let (q, j) = (q.expect("checked"), j.expect("checked"));
    let limit = variance_limit(q.m(), q.l(), &j)?;
    let lower_bound = variance_lower_bound(q.m(), q.l(), &j)?;
    exp.alphas
        .iter()
        .map(|&alpha| {
            Ok(AnalyticRow {
                alpha,
                sigma2: asymptotic_variance_quadratic(q.m(), q.l(), &j, alpha)?,
                sigma2_clt: clt_asymptotic_variance(q.m(), q.l(), &j, alpha)?,
                limit,
                lower_bound,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub target: String,
    pub observable: String,
    pub value: f64,
    pub error_estimate: f64,
    pub grid_per_axis: usize,
}

/// π(f) by nested tensor quadrature for a two-dimensional target.
pub fn reference(exp: &Experiment) -> Result<ReferenceRow> {
    let Some(obs) = exp.observable.as_ref() else {
        return Err(ConfigError::Invalid(vec!["observable: required".into()]).into());
    };
    let q = with_pool(exp.threads, || {
        expectation_2d(&exp.target, obs.as_observable().as_ref(), &QuadratureSpec::default())
    })??;
    Ok(ReferenceRow {
        target: exp.target_name.clone(),
        observable: exp.observable_name.clone(),
        value: q.value,
        error_estimate: q.error_estimate,
        grid_per_axis: q.grid_per_axis,
    })
}
