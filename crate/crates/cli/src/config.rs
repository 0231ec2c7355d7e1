//! Experiment configuration: a JSON document with a versioned schema.
//!
//! Validation never stops at the first problem. Every offending field is
//! collected into one [`ConfigError::Invalid`] so that a broken config can be
//! fixed in a single pass.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use nrl_core::observables::{Linear, NormSquared, PeriodicF, QuadraticObservable, ReactionCoordinate};
use nrl_core::perturbations::{
    block_circulant_j1, dimer_rotation_j2, j_linear_3d, optimal_linear, quasi_optimal_quadratic, rotation_2d,
    AntisymmetricMatrix, Perturbation,
};
use nrl_core::targets::{
    dimer_solvent, flat_torus, periodic_2d, standard_gaussian, warped_gaussian, DimerParams, Target,
};
use nrl_core::{Observable, Scheme};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A component selected by name with a free-form parameter map.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NamedParams {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl NamedParams {
    pub fn named(name: &str) -> Self {
        NamedParams {
            name: name.to_string(),
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// The raw document as written on disk.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub target: NamedParams,
    pub observable: Option<NamedParams>,
    pub perturbation: Option<NamedParams>,
    pub scheme: Option<String>,
    pub schemes: Option<Vec<String>>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub dts: Vec<f64>,
    pub n_steps: Option<u64>,
    pub gradient_budget: Option<u64>,
    #[serde(default = "one")]
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    pub batch_count: Option<u64>,
    pub threads: Option<usize>,
    /// Known value of π(f) used for bias and MSE columns.
    pub reference: Option<f64>,
    pub initial: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub include_mala_baseline: bool,
}

fn one() -> usize {
    1
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN_FRACTION
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A minimal config for `target`; everything else at its default.
    pub fn for_target(target: NamedParams) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            target,
            observable: None,
            perturbation: None,
            scheme: None,
            schemes: None,
            alphas: Vec::new(),
            dts: Vec::new(),
            n_steps: None,
            gradient_budget: None,
            n_chains: 1,
            seed: 0,
            burn_in_fraction: DEFAULT_BURN_IN_FRACTION,
            batch_count: None,
            threads: None,
            reference: None,
            initial: None,
            output: None,
            include_mala_baseline: false,
        }
    }
}

/// How long each run is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLength {
    Steps(u64),
    /// Gradient evaluations per run; steps follow from the scheme's cost.
    Budget(u64),
}

impl RunLength {
    pub fn steps(self, scheme: Scheme) -> u64 {
        match self {
            RunLength::Steps(n) => n,
            RunLength::Budget(b) => b / scheme.gradient_cost(),
        }
    }
}

/// What the observable is, kept alongside the trait object so that analytic
/// paths can reach M and l.
#[derive(Clone)]
pub enum ObservableSpec {
    Quadratic(QuadraticObservable),
    NormSquared,
    PeriodicF,
    ReactionCoordinate(DimerParams),
    Linear(Vec<f64>),
}

impl ObservableSpec {
    pub fn as_observable(&self) -> Arc<dyn Observable> {
        match self {
            ObservableSpec::Quadratic(q) => Arc::new(q.clone()),
            ObservableSpec::NormSquared => Arc::new(NormSquared),
            ObservableSpec::PeriodicF => Arc::new(PeriodicF),
            ObservableSpec::ReactionCoordinate(p) => Arc::new(ReactionCoordinate(*p)),
            ObservableSpec::Linear(c) => Arc::new(Linear(c.clone())),
        }
    }
}

/// A config that passed validation, with every component constructed.
pub struct Experiment {
    pub target_name: String,
    pub target: Target,
    pub observable_name: String,
    pub observable: Option<ObservableSpec>,
    pub perturbation: Perturbation,
    pub schemes: Vec<Scheme>,
    pub alphas: Vec<f64>,
    pub dts: Vec<f64>,
    pub length: Option<RunLength>,
    pub n_chains: usize,
    pub seed: u64,
    pub burn_in_fraction: f64,
    pub batch_count: Option<u64>,
    pub threads: Option<usize>,
    pub reference: Option<f64>,
    pub initial: Vec<f64>,
    pub output: Option<PathBuf>,
    pub include_mala_baseline: bool,
    pub dimer: Option<DimerParams>,
}

/// Collects problems under dotted field paths.
struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, field: &str, msg: impl std::fmt::Display) {
        self.0.push(format!("{field}: {msg}"));
    }
}

struct Params<'a> {
    field: String,
    map: &'a Map<String, Value>,
}

impl<'a> Params<'a> {
    fn new(prefix: &str, np: &'a NamedParams) -> Self {
        Params {
            field: format!("{prefix}.params"),
            map: &np.params,
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.field)
    }

    fn f64_or(&self, key: &str, default: f64, issues: &mut Issues) -> f64 {
        match self.map.get(key) {
            None => default,
            Some(v) => v.as_f64().unwrap_or_else(|| {
                issues.push(&self.path(key), "expected a number");
                default
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize, issues: &mut Issues) -> usize {
        match self.map.get(key) {
            None => default,
            Some(v) => v.as_u64().map(|n| n as usize).unwrap_or_else(|| {
                issues.push(&self.path(key), "expected a non-negative integer");
                default
            }),
        }
    }

    fn vector(&self, key: &str, issues: &mut Issues) -> Option<Vec<f64>> {
        let v = self.map.get(key)?;
        let parsed = v
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>());
        if parsed.is_none() {
            issues.push(&self.path(key), "expected an array of numbers");
        }
        parsed
    }

    fn matrix(&self, key: &str, issues: &mut Issues) -> Option<DMatrix<f64>> {
        let v = self.map.get(key)?;
        let rows = v.as_array().and_then(|rows| {
            rows.iter()
                .map(|r| {
                    r.as_array()
                        .and_then(|r| r.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                })
                .collect::<Option<Vec<Vec<f64>>>>()
        });
        let Some(rows) = rows else {
            issues.push(&self.path(key), "expected an array of rows of numbers");
            return None;
        };
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            issues.push(&self.path(key), "expected a non-empty square matrix");
            return None;
        }
        Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    fn require(&self, key: &str, issues: &mut Issues) -> bool {
        let present = self.map.contains_key(key);
        if !present {
            issues.push(&self.path(key), "required");
        }
        present
    }
}

fn build_target(np: &NamedParams, issues: &mut Issues) -> Option<(Target, Option<DimerParams>)> {
    let p = Params::new("target", np);
    let built = match np.name.as_str() {
        "standard_gaussian" => standard_gaussian(p.usize_or("dim", 2, issues)).map(|t| (t, None)),
        "warped_gaussian" => warped_gaussian(p.f64_or("b", 0.05, issues)).map(|t| (t, None)),
        "periodic_2d" => periodic_2d(p.f64_or("beta", 10.0, issues)).map(|t| (t, None)),
        "flat_torus" => flat_torus(p.usize_or("dim", 2, issues), p.f64_or("period", 1.0, issues)).map(|t| (t, None)),
        "dimer_solvent" => {
            let d = DimerParams::default();
            let params = DimerParams {
                n_particles: p.usize_or("n_particles", d.n_particles, issues),
                box_length: p.f64_or("box_length", d.box_length, issues),
                epsilon: p.f64_or("epsilon", d.epsilon, issues),
                sigma: p.f64_or("sigma", d.sigma, issues),
                h: p.f64_or("h", d.h, issues),
                w: p.f64_or("w", d.w, issues),
                coincidence_floor: d.coincidence_floor,
            };
            dimer_solvent(params, p.f64_or("beta", 1.0, issues)).map(|t| (t, Some(params)))
        }
        other => {
            issues.push(
                "target.name",
                format!(
                    "unknown target {other:?}; expected one of standard_gaussian, warped_gaussian, \
                     periodic_2d, flat_torus, dimer_solvent"
                ),
            );
            return None;
        }
    };
    built.map_err(|e| issues.push("target.params", e)).ok()
}

fn build_observable(
    np: &NamedParams,
    dim: usize,
    dimer: Option<DimerParams>,
    issues: &mut Issues,
) -> Option<ObservableSpec> {
    let p = Params::new("observable", np);
    match np.name.as_str() {
        "quadratic" => {
            if !p.require("M", issues) {
                return None;
            }
            let m = p.matrix("M", issues)?;
            if m.nrows() != dim {
                issues.push(
                    &p.path("M"),
                    format!("is {0}x{0}, target dimension is {dim}", m.nrows()),
                );
                return None;
            }
            let l = p.vector("l", issues).unwrap_or_else(|| vec![0.0; dim]);
            if l.len() != dim {
                issues.push(
                    &p.path("l"),
                    format!("has length {}, target dimension is {dim}", l.len()),
                );
                return None;
            }
            let l = DVector::from_vec(l);
            let centered = match p.map.get("centered") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => {
                    issues.push(&p.path("centered"), "expected a boolean");
                    false
                }
            };
            let built = if centered {
                if p.map.contains_key("k") {
                    issues.push(&p.path("k"), "cannot be combined with centered = true");
                }
                QuadraticObservable::centered(m, l)
            } else {
                QuadraticObservable::new(m, l, p.f64_or("k", 0.0, issues))
            };
            built
                .map(ObservableSpec::Quadratic)
                .map_err(|e| issues.push(&p.path("M"), e))
                .ok()
        }
        "norm_squared" => Some(ObservableSpec::NormSquared),
        "periodic_f" => {
            if dim != 2 {
                issues.push("observable.name", "periodic_f needs a two-dimensional target");
                return None;
            }
            Some(ObservableSpec::PeriodicF)
        }
        "reaction_coordinate" => match dimer {
            Some(params) => Some(ObservableSpec::ReactionCoordinate(params)),
            None => {
                issues.push("observable.name", "reaction_coordinate needs the dimer_solvent target");
                None
            }
        },
        "linear" => {
            if !p.require("c", issues) {
                return None;
            }
            let c = p.vector("c", issues)?;
            if c.len() != dim {
                issues.push(
                    &p.path("c"),
                    format!("has length {}, target dimension is {dim}", c.len()),
                );
                return None;
            }
            Some(ObservableSpec::Linear(c))
        }
        other => {
            issues.push(
                "observable.name",
                format!(
                    "unknown observable {other:?}; expected one of quadratic, norm_squared, periodic_f, \
                     reaction_coordinate, linear"
                ),
            );
            None
        }
    }
}

fn build_perturbation(
    np: &NamedParams,
    dim: usize,
    dimer: Option<DimerParams>,
    issues: &mut Issues,
) -> Option<Perturbation> {
    let p = Params::new("perturbation", np);
    let j: Result<AntisymmetricMatrix, String> = match np.name.as_str() {
        "none" => return Some(Perturbation::none()),
        "rotation_2d" => Ok(rotation_2d()),
        "j_linear_3d" => Ok(j_linear_3d()),
        "optimal_linear" => {
            let (has_l, has_omega) = (p.require("l", issues), p.require("omega", issues));
            if !(has_l && has_omega) {
                return None;
            }
            let l = p.vector("l", issues)?;
            let omega = p.vector("omega", issues)?;
            optimal_linear(&l, &omega).map_err(|e| e.to_string())
        }
        "quasi_optimal_quadratic" => {
            if !p.require("M", issues) {
                return None;
            }
            quasi_optimal_quadratic(&p.matrix("M", issues)?).map_err(|e| e.to_string())
        }
        "dimer_j1" | "dimer_j2" => {
            let Some(params) = dimer else {
                issues.push(
                    "perturbation.name",
                    format!("{} needs the dimer_solvent target", np.name),
                );
                return None;
            };
            let build = if np.name == "dimer_j1" {
                block_circulant_j1
            } else {
                dimer_rotation_j2
            };
            build(params.n_particles).map_err(|e| e.to_string())
        }
        "matrix" => {
            if !p.require("J", issues) {
                return None;
            }
            AntisymmetricMatrix::new(p.matrix("J", issues)?).map_err(|e| e.to_string())
        }
        other => {
            issues.push(
                "perturbation.name",
                format!(
                    "unknown perturbation {other:?}; expected one of none, rotation_2d, j_linear_3d, \
                     optimal_linear, quasi_optimal_quadratic, dimer_j1, dimer_j2, matrix"
                ),
            );
            return None;
        }
    };
    match j {
        Err(e) => {
            issues.push("perturbation.params", e);
            None
        }
        Ok(j) if j.dim() != dim => {
            issues.push(
                "perturbation",
                format!("generator is {0}x{0}, target dimension is {dim}", j.dim()),
            );
            None
        }
        Ok(j) => Some(Perturbation::linear(j, 0.0)),
    }
}

fn finite_list(field: &str, values: &[f64], positive: bool, issues: &mut Issues) {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() || (positive && *v <= 0.0) {
            let want = if positive { "positive and finite" } else { "finite" };
            issues.push(&format!("{field}[{i}]"), format!("must be {want}, got {v}"));
        }
    }
}

impl Experiment {
    /// Validates `config` and builds every component. All problems are
    /// reported together.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self, ConfigError> {
        let mut issues = Issues(Vec::new());
        if config.schema_version != SCHEMA_VERSION {
            issues.push(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    config.schema_version
                ),
            );
        }
        let target = build_target(&config.target, &mut issues);
        let dim = target.as_ref().map(|(t, _)| t.dim());
        let dimer = target.as_ref().and_then(|(_, d)| *d);

        let observable = match (&config.observable, dim) {
            (Some(np), Some(dim)) => build_observable(np, dim, dimer, &mut issues),
            _ => None,
        };
        let perturbation = match (&config.perturbation, dim) {
            (Some(np), Some(dim)) => build_perturbation(np, dim, dimer, &mut issues),
            (None, _) => Some(Perturbation::none()),
            _ => None,
        };

        let names: Vec<&String> = match (&config.scheme, &config.schemes) {
            (Some(_), Some(_)) => {
                issues.push("scheme", "give either scheme or schemes, not both");
                Vec::new()
            }
            (Some(s), None) => vec![s],
            (None, Some(list)) => list.iter().collect(),
            (None, None) => Vec::new(),
        };
        let mut schemes = Vec::new();
        for (i, name) in names.iter().enumerate() {
            match Scheme::from_name(name) {
                Some(s) => schemes.push(s),
                None => issues.push(
                    &if config.schemes.is_some() {
                        format!("schemes[{i}]")
                    } else {
                        "scheme".into()
                    },
                    format!("unknown scheme {name:?}; expected em, mala, mala_nonrev_proposal or strang"),
                ),
            }
        }

        finite_list("alphas", &config.alphas, false, &mut issues);
        finite_list("dts", &config.dts, true, &mut issues);

        let length = match (config.n_steps, config.gradient_budget) {
            (Some(_), Some(_)) => {
                issues.push("n_steps", "give exactly one of n_steps and gradient_budget");
                None
            }
            (Some(0), None) => {
                issues.push("n_steps", "must be positive");
                None
            }
            (Some(n), None) => Some(RunLength::Steps(n)),
            (None, Some(b)) => {
                if let Some(s) = schemes.iter().find(|s| b < s.gradient_cost()) {
                    issues.push(
                        "gradient_budget",
                        format!(
                            "{b} is less than one step of {} ({} evaluations)",
                            s.name(),
                            s.gradient_cost()
                        ),
                    );
                }
                Some(RunLength::Budget(b))
            }
            (None, None) => None,
        };

        if config.n_chains == 0 {
            issues.push("n_chains", "must be at least 1");
        }
        if !(0.0..1.0).contains(&config.burn_in_fraction) {
            issues.push(
                "burn_in_fraction",
                format!("must lie in [0, 1), got {}", config.burn_in_fraction),
            );
        }
        if let Some(k) = config.batch_count {
            if (k as usize) < nrl_core::estimators::MIN_BATCHES {
                issues.push(
                    "batch_count",
                    format!("must be at least {}, got {k}", nrl_core::estimators::MIN_BATCHES),
                );
            }
        }
        if config.threads == Some(0) {
            issues.push("threads", "must be at least 1");
        }
        if let Some(r) = config.reference {
            if !r.is_finite() {
                issues.push("reference", "must be finite");
            }
        }
        let initial = match (&config.initial, &target) {
            (Some(x), Some((t, _))) => {
                if x.len() != t.dim() {
                    issues.push(
                        "initial",
                        format!("has length {}, target dimension is {}", x.len(), t.dim()),
                    );
                } else if x.iter().any(|v| !v.is_finite()) {
                    issues.push("initial", "must be finite");
                } else if let Err(e) = t.energy(x) {
                    issues.push("initial", e);
                }
                x.clone()
            }
            (None, Some((_, Some(params)))) => params.lattice_configuration(),
            (None, Some((t, None))) => vec![0.0; t.dim()],
            (_, None) => Vec::new(),
        };

        if !issues.0.is_empty() {
            return Err(ConfigError::Invalid(issues.0));
        }
        let (target, dimer) = target.expect("validated");
        Ok(Experiment {
            target_name: config.target.name.clone(),
            target,
            observable_name: config.observable.as_ref().map(|o| o.name.clone()).unwrap_or_default(),
            observable,
            perturbation: perturbation.expect("validated"),
            schemes,
            alphas: config.alphas.clone(),
            dts: config.dts.clone(),
            length,
            n_chains: config.n_chains,
            seed: config.seed,
            burn_in_fraction: config.burn_in_fraction,
            batch_count: config.batch_count,
            threads: config.threads,
            reference: config.reference,
            initial,
            output: config.output.clone(),
            include_mala_baseline: config.include_mala_baseline,
            dimer,
        })
    }

    /// The antisymmetric generator behind a linear perturbation; zero for `none`.
    pub fn generator(&self) -> Option<AntisymmetricMatrix> {
        match self.perturbation.matrix() {
            Some(j) => Some(j.clone()),
            None if self.perturbation.is_trivial() => Some(AntisymmetricMatrix::zeros(self.target.dim())),
            None => None,
        }
    }
}
