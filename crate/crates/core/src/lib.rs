//! Nonreversible overdamped Langevin samplers.
//!
//! Targets π ∝ e^{−βV}, divergence-free perturbations of the reversible
//! drift, step-level integrators, asymptotic-variance estimators, and closed
//! forms for Gaussian diffusions with quadratic observables.

pub mod estimators;
pub mod gaussian;
pub mod integrators;
pub mod observables;
pub mod perturbations;
pub mod quad;
pub mod reference;
pub mod targets;

pub use estimators::{
    batch_means_variance, ensemble_asymptotic_variance, mse, time_average, BatchMeansState, EstimatorError,
    RunningAverage, VarianceMethod, VarianceReport,
};
pub use gaussian::{
    asymptotic_variance_integral, asymptotic_variance_quadratic, clt_asymptotic_variance, poisson_solution,
    polar_example_variance, solve_lyapunov, variance_limit, variance_lower_bound, GaussianError, PoissonSolution,
    VarianceCurve,
};
pub use integrators::{
    em_step, mala_step, rk4_flow_step, run_chain, strang_step, ChainResult, ChainState, IntegratorError, RngStream,
    Scheme,
};
pub use observables::{NormSquared, Observable, PeriodicF, QuadraticObservable, ReactionCoordinate};
pub use perturbations::{
    check_divergence_free, AntisymmetricMatrix, Drift, Perturbation, PerturbationError, PerturbationKind,
};
pub use reference::{expectation_2d, normalization_2d, QuadratureSpec, ReferenceError};
pub use targets::{DimerParams, Domain, DomainKind, Potential, Target, TargetError};
