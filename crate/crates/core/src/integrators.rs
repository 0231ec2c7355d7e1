//! Step-level schemes for the perturbed overdamped Langevin dynamics
//! dX = b(X) dt + √(2/β) dW with b = −∇V + αγ.
//!
//! Every scheme keeps V and ∇V at the current point cached in [`ChainState`]
//! and charges gradient evaluations to its [`StepBudget`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::perturbations::{Drift, Perturbation};
use crate::targets::{Target, TargetError};

/// Coordinates beyond this magnitude count as finite-time blowup.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("trajectory blew up at step {step}")]
    Blowup { step: u64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("initial point has dimension {got}, target expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("target evaluation failed at step {step}: {source}")]
    Target {
        step: u64,
        #[source]
        source: TargetError,
    },
}

pub type Result<T> = std::result::Result<T, IntegratorError>;

/// ChaCha8 generator keyed by (seed, stream_id); distinct stream ids give
/// non-overlapping streams of the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepBudget {
    pub gradient_evals: u64,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    drift: Vec<f64>,
    y: Vec<f64>,
    grad_y: Vec<f64>,
    drift_y: Vec<f64>,
    noise: Vec<f64>,
    z: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            y: vec![0.0; d],
            grad_y: vec![0.0; d],
            drift_y: vec![0.0; d],
            noise: vec![0.0; d],
            z: vec![0.0; d],
            k: std::array::from_fn(|_| vec![0.0; d]),
        }
    }
}

/// Current point with V(x) and ∇V(x) cached.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
    pub potential: f64,
    /// Completed steps.
    pub step: u64,
    pub budget: StepBudget,
    scratch: Scratch,
}

impl ChainState {
    /// Wraps `x` into the domain and evaluates the cache. This setup
    /// evaluation is not charged to the budget.
    pub fn new(target: &Target, x: &[f64]) -> Result<Self> {
        let d = target.dim();
        if x.len() != d {
            return Err(IntegratorError::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        let mut x = x.to_vec();
        target.domain().wrap(&mut x);
        let mut grad = vec![0.0; d];
        let potential = target
            .energy_and_gradient(&x, &mut grad)
            .map_err(|source| IntegratorError::Target { step: 0, source })?;
        Ok(ChainState {
            x,
            grad,
            potential,
            step: 0,
            budget: StepBudget::default(),
            scratch: Scratch::new(d),
        })
    }

    /// Largest deviation between the cache and a fresh evaluation, relative
    /// to 1 + |value|.
    pub fn cache_error(&self, target: &Target) -> std::result::Result<f64, TargetError> {
        let mut g = vec![0.0; self.x.len()];
        let v = target.energy_and_gradient(&self.x, &mut g)?;
        let mut err = (v - self.potential).abs() / (1.0 + v.abs());
        for (a, b) in g.iter().zip(&self.grad) {
            err = err.max((a - b).abs() / (1.0 + a.abs()));
        }
        Ok(err)
    }

    fn fill_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for v in self.scratch.noise.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(IntegratorError::InvalidStep(dt))
    }
}

fn blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
}

/// Moves the state to its (already updated) `x`: wraps, checks for blowup,
/// refreshes the cache and charges one gradient evaluation.
fn refresh(state: &mut ChainState, target: &Target) -> Result<()> {
    let step = state.step + 1;
    target.domain().wrap(&mut state.x);
    if blown_up(&state.x) {
        return Err(IntegratorError::Blowup { step });
    }
    state.potential = target
        .energy_and_gradient(&state.x, &mut state.grad)
        .map_err(|source| IntegratorError::Target { step, source })?;
    state.budget.gradient_evals += 1;
    if !state.potential.is_finite() || state.grad.iter().any(|g| !g.is_finite()) {
        return Err(IntegratorError::Blowup { step });
    }
    Ok(())
}

/// x' = x + Δt·b(x) + √(2Δt/β)·ξ with the given ξ.
pub fn em_step_with_noise(state: &mut ChainState, drift: &Drift, dt: f64, xi: &[f64]) -> Result<()> {
    check_dt(dt)?;
    let target = drift.target;
    let b = &mut state.scratch.drift;
    drift
        .perturbation
        .drift(&state.x, &state.grad, state.potential, target.beta(), b);
    let sd = (2.0 * dt / target.beta()).sqrt();
    for ((x, bi), e) in state.x.iter_mut().zip(b.iter()).zip(xi) {
        *x += dt * bi + sd * e;
    }
    refresh(state, target)?;
    state.step += 1;
    Ok(())
}

/// One Euler–Maruyama step of the perturbed dynamics.
pub fn em_step<R: Rng + ?Sized>(state: &mut ChainState, drift: &Drift, dt: f64, rng: &mut R) -> Result<()> {
    state.fill_noise(rng);
    let xi = std::mem::take(&mut state.scratch.noise);
    let out = em_step_with_noise(state, drift, dt, &xi);
    state.scratch.noise = xi;
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaMove {
    pub accepted: bool,
    /// log of the Metropolis–Hastings ratio; −∞ for proposals outside the
    /// support or that could not be evaluated.
    pub log_ratio: f64,
}

fn mala_core(
    state: &mut ChainState,
    target: &Target,
    perturbation: &Perturbation,
    dt: f64,
    xi: &[f64],
    u: f64,
) -> Result<MalaMove> {
    let beta = target.beta();
    let domain = target.domain();
    let s = &mut state.scratch;
    perturbation.drift(&state.x, &state.grad, state.potential, beta, &mut s.drift);
    let sd = (2.0 * dt / beta).sqrt();
    for i in 0..state.x.len() {
        s.y[i] = state.x[i] + dt * s.drift[i] + sd * xi[i];
    }
    domain.wrap(&mut s.y);
    // charged per proposal, whether or not the proposal can be evaluated
    state.budget.gradient_evals += 1;
    let rejected = MalaMove {
        accepted: false,
        log_ratio: f64::NEG_INFINITY,
    };
    if blown_up(&s.y) {
        return Ok(rejected);
    }
    let vy = match target.energy_and_gradient(&s.y, &mut s.grad_y) {
        Ok(v) => v,
        Err(TargetError::CoincidentParticles { .. }) => return Ok(rejected),
        Err(source) => {
            return Err(IntegratorError::Target {
                step: state.step + 1,
                source,
            })
        }
    };
    perturbation.drift(&s.y, &s.grad_y, vy, beta, &mut s.drift_y);
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..state.x.len() {
        let a = domain.displacement(s.y[i] - state.x[i] - dt * s.drift[i]);
        let b = domain.displacement(state.x[i] - s.y[i] - dt * s.drift_y[i]);
        fwd += a * a;
        bwd += b * b;
    }
    let log_ratio = -beta * (vy - state.potential) + beta * (fwd - bwd) / (4.0 * dt);
    let accepted = u.ln() < log_ratio;
    if accepted {
        std::mem::swap(&mut state.x, &mut s.y);
        std::mem::swap(&mut state.grad, &mut s.grad_y);
        state.potential = vy;
    }
    Ok(MalaMove {
        accepted,
        log_ratio: if log_ratio.is_nan() {
            f64::NEG_INFINITY
        } else {
            log_ratio
        },
    })
}

/// MALA step with given proposal noise ξ and uniform u ∈ (0, 1).
///
/// Passing a perturbation adds αγ to the proposal drift; the acceptance
/// ratio always uses the densities of the proposal actually made.
pub fn mala_step_with_noise(
    state: &mut ChainState,
    target: &Target,
    perturbation: Option<&Perturbation>,
    dt: f64,
    xi: &[f64],
    u: f64,
) -> Result<MalaMove> {
    check_dt(dt)?;
    let none = Perturbation::none();
    let mv = mala_core(state, target, perturbation.unwrap_or(&none), dt, xi, u)?;
    state.step += 1;
    Ok(mv)
}

fn mala_draw<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &Target,
    perturbation: &Perturbation,
    dt: f64,
    rng: &mut R,
) -> Result<MalaMove> {
    state.fill_noise(rng);
    let u: f64 = rng.random();
    let xi = std::mem::take(&mut state.scratch.noise);
    let out = mala_core(state, target, perturbation, dt, &xi, u);
    state.scratch.noise = xi;
    out
}

/// Metropolis-adjusted Langevin step; returns whether the proposal was accepted.
pub fn mala_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &Target,
    dt: f64,
    rng: &mut R,
    perturbation: Option<&Perturbation>,
) -> Result<bool> {
    check_dt(dt)?;
    let none = Perturbation::none();
    let mv = mala_draw(state, target, perturbation.unwrap_or(&none), dt, rng)?;
    state.step += 1;
    Ok(mv.accepted)
}

/// Classical fourth-order Runge–Kutta step for ż = f(z), with f(x) supplied
/// as `k1`.
pub fn rk4_step<F>(x: &[f64], k1: &[f64], dt: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = x.len();
    let mut z = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    for i in 0..d {
        z[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(&z, &mut k2);
    for i in 0..d {
        z[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(&z, &mut k3);
    for i in 0..d {
        z[i] = x[i] + dt * k3[i];
    }
    f(&z, &mut k4);
    (0..d)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn rk4_flow_core(state: &mut ChainState, target: &Target, perturbation: &Perturbation, dt: f64) -> Result<()> {
    let beta = target.beta();
    let alpha = perturbation.alpha;
    let step = state.step + 1;
    let Scratch { z, grad_y, k, .. } = &mut state.scratch;
    perturbation.flow(&state.x, &state.grad, state.potential, beta, &mut k[0]);
    for (stage, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
        for i in 0..z.len() {
            z[i] = state.x[i] + c * dt * alpha * k[stage - 1][i];
        }
        let v = target
            .energy_and_gradient(z, grad_y)
            .map_err(|source| IntegratorError::Target { step, source })?;
        state.budget.gradient_evals += 1;
        perturbation.flow(z, grad_y, v, beta, &mut k[stage]);
    }
    for i in 0..state.x.len() {
        state.x[i] += dt * alpha / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
    refresh(state, target)
}

/// One RK4 step of the deterministic flow ż = αγ(z). Costs four gradient
/// evaluations: three stages plus the refreshed end point.
pub fn rk4_flow_step(state: &mut ChainState, target: &Target, perturbation: &Perturbation, dt: f64) -> Result<()> {
    check_dt(dt)?;
    rk4_flow_core(state, target, perturbation, dt)?;
    state.step += 1;
    Ok(())
}

/// Strang splitting: reversible MALA half-step, RK4 flow over Δt, reversible
/// MALA half-step. Returns the number of accepted half-steps.
pub fn strang_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &Target,
    perturbation: &Perturbation,
    dt: f64,
    rng: &mut R,
) -> Result<u32> {
    check_dt(dt)?;
    let none = Perturbation::none();
    let first = mala_draw(state, target, &none, 0.5 * dt, rng)?;
    rk4_flow_core(state, target, perturbation, dt)?;
    let second = mala_draw(state, target, &none, 0.5 * dt, rng)?;
    state.step += 1;
    Ok(first.accepted as u32 + second.accepted as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Em,
    Mala,
    MalaNonrevProposal,
    Strang,
}

impl Scheme {
    /// Gradient evaluations per step.
    pub fn gradient_cost(self) -> u64 {
        match self {
            Scheme::Strang => 6,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::Mala => "mala",
            Scheme::MalaNonrevProposal => "mala_nonrev_proposal",
            Scheme::Strang => "strang",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "em" => Some(Scheme::Em),
            "mala" => Some(Scheme::Mala),
            "mala_nonrev_proposal" => Some(Scheme::MalaNonrevProposal),
            "strang" => Some(Scheme::Strang),
            _ => None,
        }
    }

    fn proposals_per_step(self) -> u64 {
        match self {
            Scheme::Em => 0,
            Scheme::Mala | Scheme::MalaNonrevProposal => 1,
            Scheme::Strang => 2,
        }
    }
}

/// Receives the state after every completed step.
pub trait Observer {
    fn observe(&mut self, step: u64, x: &[f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub scheme: Scheme,
    pub steps_completed: u64,
    pub gradient_evals: u64,
    pub proposals: u64,
    pub accepted: u64,
    /// Set when the chain stopped early.
    pub termination: Option<IntegratorError>,
    pub final_x: Vec<f64>,
}

impl ChainResult {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepted as f64 / self.proposals as f64)
    }

    pub fn is_complete(&self) -> bool {
        self.termination.is_none()
    }

    pub fn blowup_step(&self) -> Option<u64> {
        match self.termination {
            Some(IntegratorError::Blowup { step }) | Some(IntegratorError::Target { step, .. }) => Some(step),
            _ => None,
        }
    }
}

/// Runs `n_steps` steps of `scheme`, feeding every new state to the observers.
///
/// A blowup or failed target evaluation ends the chain early; the result then
/// records the partial run in `termination`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<R: Rng + ?Sized>(
    initial: &[f64],
    scheme: Scheme,
    target: &Target,
    perturbation: &Perturbation,
    dt: f64,
    n_steps: u64,
    rng: &mut R,
    observers: &mut [&mut dyn Observer],
) -> Result<ChainResult> {
    check_dt(dt)?;
    let mut state = ChainState::new(target, initial)?;
    let drift = Drift::new(target, perturbation);
    let mut accepted = 0u64;
    let mut termination = None;
    for _ in 0..n_steps {
        let outcome = match scheme {
            Scheme::Em => em_step(&mut state, &drift, dt, rng).map(|_| 0),
            Scheme::Mala => mala_step(&mut state, target, dt, rng, None).map(u64::from),
            Scheme::MalaNonrevProposal => mala_step(&mut state, target, dt, rng, Some(perturbation)).map(u64::from),
            Scheme::Strang => strang_step(&mut state, target, perturbation, dt, rng).map(u64::from),
        };
        match outcome {
            Ok(a) => accepted += a,
            Err(e) => {
                termination = Some(e);
                break;
            }
        }
        for obs in observers.iter_mut() {
            obs.observe(state.step, &state.x);
        }
    }
    Ok(ChainResult {
        scheme,
        steps_completed: state.step,
        gradient_evals: state.budget.gradient_evals,
        proposals: state.step * scheme.proposals_per_step(),
        accepted,
        termination,
        final_x: state.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbations::{rotation_2d, AntisymmetricMatrix};
    use crate::targets::{flat_torus, standard_gaussian, warped_gaussian};
    use nalgebra::DMatrix;

    struct Collect(Vec<Vec<f64>>);

    impl Observer for Collect {
        fn observe(&mut self, _step: u64, x: &[f64]) {
            self.0.push(x.to_vec());
        }
    }

    struct Moments {
        n: f64,
        sums: [f64; 4],
    }

    impl Observer for Moments {
        fn observe(&mut self, _step: u64, x: &[f64]) {
            self.n += 1.0;
            let mut p = 1.0;
            for s in self.sums.iter_mut() {
                p *= x[0];
                *s += p;
            }
        }
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let draw = |s: &mut RngStream| (0..8).map(|_| s.next_u64()).collect::<Vec<_>>();
        let a = draw(&mut RngStream::new(7, 3));
        assert_eq!(a, draw(&mut RngStream::new(7, 3)));
        assert_ne!(a, draw(&mut RngStream::new(7, 4)));
        assert_ne!(a, draw(&mut RngStream::new(8, 3)));
    }

    #[test]
    fn em_zero_drift_zero_noise_is_identity() {
        let t = flat_torus(2, 1.0).unwrap();
        let p = Perturbation::none();
        let mut s = ChainState::new(&t, &[0.3, 0.6]).unwrap();
        em_step_with_noise(&mut s, &Drift::new(&t, &p), 0.1, &[0.0, 0.0]).unwrap();
        assert_eq!(s.x, vec![0.3, 0.6]);
        assert_eq!((s.step, s.budget.gradient_evals), (1, 1));
    }

    #[test]
    fn em_pure_noise_step() {
        let t = standard_gaussian(2).unwrap();
        let p = Perturbation::none();
        let mut s = ChainState::new(&t, &[0.0, 0.0]).unwrap();
        em_step_with_noise(&mut s, &Drift::new(&t, &p), 0.01, &[1.0, 0.0]).unwrap();
        assert_eq!(s.x, vec![0.02f64.sqrt(), 0.0]);
        assert!(s.cache_error(&t).unwrap() < 1e-12);
    }

    #[test]
    fn em_wraps_on_torus() {
        let t = flat_torus(1, 1.0).unwrap();
        let p = Perturbation::none();
        let mut s = ChainState::new(&t, &[0.9]).unwrap();
        em_step_with_noise(&mut s, &Drift::new(&t, &p), 0.02, &[1.0]).unwrap();
        assert!((s.x[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn em_blowup_is_signalled() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 10.0);
        let mut rng = RngStream::new(1, 0);
        let r = run_chain(&[0.0, 5.0], Scheme::Em, &t, &p, 1.0, 1000, &mut rng, &mut []).unwrap();
        let step = r.blowup_step().expect("large steps must diverge");
        assert!(!r.is_complete());
        assert_eq!(r.steps_completed + 1, step);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let t = standard_gaussian(2).unwrap();
        let p = Perturbation::none();
        let mut rng = RngStream::new(1, 0);
        assert_eq!(
            run_chain(&[0.0, 0.0], Scheme::Em, &t, &p, 0.0, 10, &mut rng, &mut []).unwrap_err(),
            IntegratorError::InvalidStep(0.0)
        );
        assert!(matches!(
            run_chain(&[0.0], Scheme::Em, &t, &p, 0.1, 10, &mut rng, &mut []),
            Err(IntegratorError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mala_zero_displacement_is_accepted() {
        let t = standard_gaussian(2).unwrap();
        let mut s = ChainState::new(&t, &[0.0, 0.0]).unwrap();
        let mv = mala_step_with_noise(&mut s, &t, None, 0.3, &[0.0, 0.0], 0.999_999).unwrap();
        assert!(mv.accepted);
        assert_eq!(mv.log_ratio, 0.0);
    }

    #[test]
    fn mala_ratio_matches_direct_density_formula() {
        let t = standard_gaussian(1).unwrap();
        let dt: f64 = 0.5;
        let normal_pdf = |x: f64, mean: f64, var: f64| {
            (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let pi = |x: f64| (-0.5 * x * x).exp();
        let (x, y) = (0.0, (2.0 * dt).sqrt());
        let expected = (pi(y) * normal_pdf(x, y - dt * y, 2.0 * dt)) / (pi(x) * normal_pdf(y, x - dt * x, 2.0 * dt));
        let mut s = ChainState::new(&t, &[x]).unwrap();
        let mv = mala_step_with_noise(&mut s, &t, None, dt, &[1.0], 0.5).unwrap();
        assert!((mv.log_ratio.exp() - expected).abs() < 1e-14);
        assert_eq!(mv.accepted, 0.5 < expected);
        let mut s = ChainState::new(&t, &[x]).unwrap();
        let mv = mala_step_with_noise(&mut s, &t, None, dt, &[1.0], expected * 1.000_001).unwrap();
        assert!(!mv.accepted);
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.budget.gradient_evals, 1);
    }

    #[test]
    fn mala_nonreversible_proposal_ratio() {
        // with a perturbation the reverse proposal is no longer the mirror image
        let t = standard_gaussian(2).unwrap();
        let p = Perturbation::linear(rotation_2d(), 2.0);
        let dt: f64 = 0.2;
        let x = [1.0, 0.0];
        let xi = [0.3, -0.4];
        let b = |z: [f64; 2]| [-z[0] - 2.0 * z[1], -z[1] + 2.0 * z[0]];
        let bx = b(x);
        let sd = (2.0 * dt).sqrt();
        let y = [x[0] + dt * bx[0] + sd * xi[0], x[1] + dt * bx[1] + sd * xi[1]];
        let by = b(y);
        let sq = |a: [f64; 2]| a[0] * a[0] + a[1] * a[1];
        let expected = -(sq(y) - sq(x)) / 2.0 - sq([x[0] - y[0] - dt * by[0], x[1] - y[1] - dt * by[1]]) / (4.0 * dt)
            + sq(xi) * 2.0 * dt / (4.0 * dt);
        let mut s = ChainState::new(&t, &x).unwrap();
        let mv = mala_step_with_noise(&mut s, &t, Some(&p), dt, &xi, 0.5).unwrap();
        assert!((mv.log_ratio - expected).abs() < 1e-13);
    }

    /// 𝒩(0, β⁻¹) in one dimension as the Gibbs measure of |x|²/2 at inverse temperature β.
    fn cold_gaussian(beta: f64) -> Target {
        Target::new(
            "cold_gaussian",
            crate::targets::Domain::euclidean(1).unwrap(),
            beta,
            std::sync::Arc::new(crate::targets::StandardGaussianPotential),
        )
        .unwrap()
    }

    #[test]
    fn mala_ratio_with_temperature() {
        let beta = 4.0;
        let t = cold_gaussian(beta);
        let dt: f64 = 0.3;
        let var = 2.0 * dt / beta;
        let log_q = |to: f64, from: f64| -(to - from + dt * from).powi(2) / (2.0 * var);
        let (x, xi) = (0.4, 0.7);
        let y = x - dt * x + var.sqrt() * xi;
        let expected = -beta * (y * y - x * x) / 2.0 + log_q(x, y) - log_q(y, x);
        let mut s = ChainState::new(&t, &[x]).unwrap();
        let mv = mala_step_with_noise(&mut s, &t, None, dt, &[xi], 0.5).unwrap();
        assert!(
            (mv.log_ratio - expected).abs() < 1e-13,
            "{} vs {expected}",
            mv.log_ratio
        );
    }

    #[test]
    fn em_stationary_variance_with_temperature() {
        // x' = (1 − Δt)x + √(2Δt/β)ξ has stationary variance 1/(β(1 − Δt/2))
        let (beta, dt) = (4.0, 0.1);
        let t = cold_gaussian(beta);
        let mut rng = RngStream::new(99, 0);
        let mut m = Moments { n: 0.0, sums: [0.0; 4] };
        run_chain(
            &[0.0],
            Scheme::Em,
            &t,
            &Perturbation::none(),
            dt,
            400_000,
            &mut rng,
            &mut [&mut m],
        )
        .unwrap();
        let second = m.sums[1] / m.n;
        let exact = 1.0 / (beta * (1.0 - dt / 2.0));
        assert!((second / exact - 1.0).abs() < 0.03, "{second} vs {exact}");
    }

    #[test]
    fn mala_second_moment_short_run() {
        let t = standard_gaussian(1).unwrap();
        let mut rng = RngStream::new(2024, 0);
        let mut m = Moments { n: 0.0, sums: [0.0; 4] };
        let r = run_chain(
            &[0.0],
            Scheme::Mala,
            &t,
            &Perturbation::none(),
            0.5,
            200_000,
            &mut rng,
            &mut [&mut m],
        )
        .unwrap();
        let rate = r.acceptance_rate().unwrap();
        assert!(rate > 0.0 && rate < 1.0);
        assert_eq!(r.gradient_evals, 200_000);
        let second = m.sums[1] / m.n;
        // correlated samples: generous band of 0.05 against a standard error near 0.006
        assert!((second - 1.0).abs() < 0.05, "{second}");
    }

    #[test]
    fn rk4_zero_field_and_rotation_order() {
        let x = [0.4, -1.2];
        let zero = rk4_step(&x, &[0.0, 0.0], 0.3, |_z, out| out.fill(0.0));
        assert_eq!(zero, x.to_vec());

        let j = rotation_2d();
        let field = |z: &[f64], out: &mut [f64]| j.apply(z, out);
        let global_error = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let mut z = vec![1.0, 0.0];
            for _ in 0..n {
                let mut k1 = [0.0; 2];
                field(&z, &mut k1);
                z = rk4_step(&z, &k1, dt, field);
            }
            let exact = j.matrix().exp() * nalgebra::DVector::from_column_slice(&[1.0, 0.0]);
            ((z[0] - exact[0]).powi(2) + (z[1] - exact[1]).powi(2)).sqrt()
        };
        let ratio = global_error(0.1) / global_error(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "{ratio}");
    }

    #[test]
    fn rk4_flow_conserves_potential_to_fifth_order() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 1.0);
        let dts = [0.02, 0.04, 0.08, 0.16, 0.2];
        let drift: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let mut s = ChainState::new(&t, &[3.0, 2.0]).unwrap();
                let v0 = s.potential;
                rk4_flow_step(&mut s, &t, &p, dt).unwrap();
                (s.potential - v0).abs()
            })
            .collect();
        let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let ly: Vec<f64> = drift.iter().map(|d| d.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((4.7..=5.3).contains(&slope), "slope {slope}, drifts {drift:?}");
    }

    #[test]
    fn strang_without_perturbation_is_two_mala_half_steps() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 0.0);
        let mut a = ChainState::new(&t, &[1.0, 4.0]).unwrap();
        let mut b = a.clone();
        let mut ra = RngStream::new(5, 1);
        let mut rb = ra.clone();
        for _ in 0..50 {
            strang_step(&mut a, &t, &p, 0.2, &mut ra).unwrap();
            mala_step(&mut b, &t, 0.1, &mut rb, None).unwrap();
            mala_step(&mut b, &t, 0.1, &mut rb, None).unwrap();
        }
        assert_eq!(a.x, b.x);
        assert_eq!(a.budget.gradient_evals, 300);
    }

    #[test]
    fn strang_displacement_is_diffusive() {
        let t = standard_gaussian(2).unwrap();
        let p = Perturbation::linear(rotation_2d(), 1.0);
        let mean_sq = |dt: f64| {
            let mut rng = RngStream::new(11, 0);
            let mut total = 0.0;
            for _ in 0..4000 {
                let mut s = ChainState::new(&t, &[0.5, 0.5]).unwrap();
                strang_step(&mut s, &t, &p, dt, &mut rng).unwrap();
                total += (s.x[0] - 0.5).powi(2) + (s.x[1] - 0.5).powi(2);
            }
            total / 4000.0
        };
        // E|Δx|² ≈ 4Δt·(acceptance) in two dimensions
        let ratio = mean_sq(1e-2) / mean_sq(1e-4);
        assert!((60.0..=140.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn gradient_budget_is_exact() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 3.0);
        for scheme in [Scheme::Em, Scheme::Mala, Scheme::MalaNonrevProposal, Scheme::Strang] {
            let mut rng = RngStream::new(3, 0);
            let r = run_chain(&[0.0, 5.0], scheme, &t, &p, 0.01, 1000, &mut rng, &mut []).unwrap();
            assert!(r.is_complete());
            assert_eq!(r.gradient_evals, 1000 * scheme.gradient_cost(), "{scheme:?}");
        }
        let mut rng = RngStream::new(3, 0);
        let r = run_chain(&[0.0, 5.0], Scheme::Mala, &t, &p, 0.01, 0, &mut rng, &mut []).unwrap();
        assert_eq!((r.steps_completed, r.gradient_evals, r.acceptance_rate()), (0, 0, None));
    }

    #[test]
    fn chains_are_deterministic() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 10.0);
        let run = |stream| {
            let mut rng = RngStream::new(99, stream);
            let mut c = Collect(Vec::new());
            run_chain(&[0.0, 5.0], Scheme::Strang, &t, &p, 0.05, 200, &mut rng, &mut [&mut c]).unwrap();
            c.0
        };
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn cache_stays_consistent() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 5.0);
        let mut rng = RngStream::new(4, 0);
        let mut s = ChainState::new(&t, &[0.0, 5.0]).unwrap();
        for _ in 0..100 {
            strang_step(&mut s, &t, &p, 0.05, &mut rng).unwrap();
            assert!(s.cache_error(&t).unwrap() < 1e-12);
            mala_step(&mut s, &t, 0.05, &mut rng, Some(&p)).unwrap();
            assert!(s.cache_error(&t).unwrap() < 1e-12);
        }
    }

    #[test]
    fn strang_survives_stiff_regime() {
        let t = warped_gaussian(0.05).unwrap();
        let p = Perturbation::linear(rotation_2d(), 10.0);
        let mut rng = RngStream::new(17, 0);
        let r = run_chain(&[0.0, 5.0], Scheme::Strang, &t, &p, 0.1, 100_000, &mut rng, &mut []).unwrap();
        assert!(r.is_complete(), "{:?}", r.termination);
    }

    #[test]
    fn three_dimensional_flow_uses_matrix() {
        let t = standard_gaussian(3).unwrap();
        let j = AntisymmetricMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ))
        .unwrap();
        let p = Perturbation::linear(j, 1.0);
        let mut s = ChainState::new(&t, &[1.0, 0.0, 2.0]).unwrap();
        rk4_flow_step(&mut s, &t, &p, 0.1).unwrap();
        // γ = −Jx rotates (x₁, x₂) and leaves x₃ alone
        assert_eq!(s.x[2], 2.0);
        assert!(((s.x[0].powi(2) + s.x[1].powi(2)) - 1.0).abs() < 1e-6);
        assert!(s.x[1] > 0.0);
        assert_eq!(s.budget.gradient_evals, 4);
    }
}
