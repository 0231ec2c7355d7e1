//! Target distributions π ∝ exp(−βV) given as potentials with analytic gradients.
//!
//! A [`Target`] bundles a [`Potential`] with its [`Domain`] and inverse
//! temperature. Samplers only ever see the unnormalized density; the
//! normalization constant is never needed.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Distances below this are treated as coincident particles.
pub const DEFAULT_COINCIDENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("point has dimension {got}, target expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("particles {i} and {j} coincide (distance {distance:e})")]
    CoincidentParticles { i: usize, j: usize, distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    Euclidean,
    /// Periodic box `[0, period)^dim`.
    Torus {
        period: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub kind: DomainKind,
    pub dim: usize,
}

impl Domain {
    pub fn euclidean(dim: usize) -> Result<Self, TargetError> {
        if dim == 0 {
            return Err(TargetError::ZeroDimension);
        }
        Ok(Domain {
            kind: DomainKind::Euclidean,
            dim,
        })
    }

    pub fn torus(dim: usize, period: f64) -> Result<Self, TargetError> {
        if dim == 0 {
            return Err(TargetError::ZeroDimension);
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(TargetError::InvalidParameter {
                name: "period",
                value: period,
                reason: "must be positive and finite",
            });
        }
        Ok(Domain {
            kind: DomainKind::Torus { period },
            dim,
        })
    }

    pub fn period(&self) -> Option<f64> {
        match self.kind {
            DomainKind::Euclidean => None,
            DomainKind::Torus { period } => Some(period),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, DomainKind::Torus { .. })
    }

    /// Reduces torus coordinates to `[0, L)`; no-op on Euclidean space.
    pub fn wrap(&self, x: &mut [f64]) {
        if let DomainKind::Torus { period } = self.kind {
            for xi in x.iter_mut() {
                *xi = wrap_coordinate(*xi, period);
            }
        }
    }

    /// Nearest-image representative of a displacement.
    pub fn displacement(&self, d: f64) -> f64 {
        match self.kind {
            DomainKind::Euclidean => d,
            DomainKind::Torus { period } => minimum_image(d, period),
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self.kind {
            DomainKind::Euclidean => true,
            DomainKind::Torus { period } => x.iter().all(|&v| (0.0..period).contains(&v)),
        }
    }
}

pub(crate) fn wrap_coordinate(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    // rem_euclid can round up to exactly `period` for tiny negative inputs
    if r >= period {
        0.0
    } else {
        r
    }
}

pub(crate) fn minimum_image(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

/// A potential energy V with hand-coded gradient.
///
/// Implementations may assume `x` has the right dimension and, on a torus,
/// lies in the fundamental cell.
pub trait Potential: Send + Sync {
    fn energy(&self, x: &[f64]) -> Result<f64, TargetError>;

    /// Writes ∇V(x) into `grad` and returns V(x).
    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError>;

    /// Integration box for two-dimensional plane targets holding all but a
    /// negligible tail when each marginal is cut `n_sd` standard deviations out.
    fn plane_bounds(&self, _n_sd: f64) -> Option<[(f64, f64); 2]> {
        None
    }
}

/// Gibbs target π ∝ exp(−βV) on a [`Domain`]. Cheap to clone and share.
#[derive(Clone)]
pub struct Target {
    name: String,
    domain: Domain,
    beta: f64,
    potential: Arc<dyn Potential>,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl Target {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        beta: f64,
        potential: Arc<dyn Potential>,
    ) -> Result<Self, TargetError> {
        check_positive("beta", beta)?;
        Ok(Target {
            name: name.into(),
            domain,
            beta,
            potential,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64, TargetError> {
        self.check_dim(x.len())?;
        if self.domain.contains(x) {
            self.potential.energy(x)
        } else {
            let mut y = x.to_vec();
            self.domain.wrap(&mut y);
            self.potential.energy(&y)
        }
    }

    pub fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        self.check_dim(x.len())?;
        self.check_dim(grad.len())?;
        if self.domain.contains(x) {
            self.potential.energy_and_gradient(x, grad)
        } else {
            let mut y = x.to_vec();
            self.domain.wrap(&mut y);
            self.potential.energy_and_gradient(&y, grad)
        }
    }

    /// log π̃(x) = −βV(x).
    pub fn log_density(&self, x: &[f64]) -> Result<f64, TargetError> {
        Ok(-self.beta * self.energy(x)?)
    }

    fn check_dim(&self, got: usize) -> Result<(), TargetError> {
        if got != self.domain.dim {
            return Err(TargetError::DimensionMismatch {
                expected: self.domain.dim,
                got,
            });
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), TargetError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TargetError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StandardGaussianPotential;

impl Potential for StandardGaussianPotential {
    fn energy(&self, x: &[f64]) -> Result<f64, TargetError> {
        Ok(0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        grad.copy_from_slice(x);
        self.energy(x)
    }

    fn plane_bounds(&self, n_sd: f64) -> Option<[(f64, f64); 2]> {
        Some([(-n_sd, n_sd), (-n_sd, n_sd)])
    }
}

/// N(0, I) in `dim` dimensions: V(x) = |x|²/2, β = 1.
pub fn standard_gaussian(dim: usize) -> Result<Target, TargetError> {
    Target::new(
        "standard_gaussian",
        Domain::euclidean(dim)?,
        1.0,
        Arc::new(StandardGaussianPotential),
    )
}

/// V(x) = x₁²/100 + (x₂ + b·x₁² − 100b)².
#[derive(Debug, Clone, Copy)]
pub struct WarpedGaussianPotential {
    pub b: f64,
}

impl Potential for WarpedGaussianPotential {
    fn energy(&self, x: &[f64]) -> Result<f64, TargetError> {
        let z = x[1] + self.b * x[0] * x[0] - 100.0 * self.b;
        Ok(x[0] * x[0] / 100.0 + z * z)
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        let z = x[1] + self.b * x[0] * x[0] - 100.0 * self.b;
        grad[0] = x[0] / 50.0 + 4.0 * self.b * x[0] * z;
        grad[1] = 2.0 * z;
        Ok(x[0] * x[0] / 100.0 + z * z)
    }

    fn plane_bounds(&self, n_sd: f64) -> Option<[(f64, f64); 2]> {
        // x₁ ~ N(0, 50) and z = x₂ + b x₁² − 100b ~ N(0, 1/2) independently.
        let x1 = n_sd * 50f64.sqrt();
        let z = n_sd * 0.5f64.sqrt();
        let center = 100.0 * self.b;
        Some([(-x1, x1), (center - self.b * x1 * x1 - z, center + z)])
    }
}

pub fn warped_gaussian(b: f64) -> Result<Target, TargetError> {
    check_positive("b", b)?;
    Target::new(
        "warped_gaussian",
        Domain::euclidean(2)?,
        1.0,
        Arc::new(WarpedGaussianPotential { b }),
    )
}

/// V(x) = sin(2πx₁)cos(2πx₂) on the unit torus.
#[derive(Debug, Clone, Copy)]
pub struct Periodic2dPotential;

impl Potential for Periodic2dPotential {
    fn energy(&self, x: &[f64]) -> Result<f64, TargetError> {
        Ok((2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos())
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        let (s1, c1) = (2.0 * PI * x[0]).sin_cos();
        let (s2, c2) = (2.0 * PI * x[1]).sin_cos();
        grad[0] = 2.0 * PI * c1 * c2;
        grad[1] = -2.0 * PI * s1 * s2;
        Ok(s1 * c2)
    }
}

pub fn periodic_2d(beta: f64) -> Result<Target, TargetError> {
    Target::new(
        "periodic_2d",
        Domain::torus(2, 1.0)?,
        beta,
        Arc::new(Periodic2dPotential),
    )
}

/// V ≡ 0 on a torus; the uniform distribution.
#[derive(Debug, Clone, Copy)]
pub struct FlatPotential;

impl Potential for FlatPotential {
    fn energy(&self, _x: &[f64]) -> Result<f64, TargetError> {
        Ok(0.0)
    }

    fn energy_and_gradient(&self, _x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        grad.fill(0.0);
        Ok(0.0)
    }
}

pub fn flat_torus(dim: usize, period: f64) -> Result<Target, TargetError> {
    Target::new("flat_torus", Domain::torus(dim, period)?, 1.0, Arc::new(FlatPotential))
}

/// Dimer pair (particles 0 and 1) in a WCA solvent, two-dimensional periodic box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimerParams {
    pub n_particles: usize,
    pub box_length: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Barrier height of the dimer double well.
    pub h: f64,
    /// Half-width of the dimer double well.
    pub w: f64,
    pub coincidence_floor: f64,
}

impl Default for DimerParams {
    fn default() -> Self {
        DimerParams {
            n_particles: 8,
            box_length: 6.0,
            epsilon: 1.0,
            sigma: 1.0,
            h: 1.0,
            w: 0.5,
            coincidence_floor: DEFAULT_COINCIDENCE_FLOOR,
        }
    }
}

impl DimerParams {
    /// WCA cutoff r₀ = 2^{1/6} σ, also the compact dimer length.
    pub fn r0(&self) -> f64 {
        2f64.powf(1.0 / 6.0) * self.sigma
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.n_particles < 3 {
            return Err(TargetError::InvalidParameter {
                name: "n_particles",
                value: self.n_particles as f64,
                reason: "need a dimer plus at least one solvent particle",
            });
        }
        check_positive("box_length", self.box_length)?;
        check_positive("epsilon", self.epsilon)?;
        check_positive("sigma", self.sigma)?;
        check_positive("h", self.h)?;
        check_positive("w", self.w)?;
        check_positive("coincidence_floor", self.coincidence_floor)?;
        if self.r0() >= self.box_length / 2.0 {
            return Err(TargetError::InvalidParameter {
                name: "box_length",
                value: self.box_length,
                reason: "minimum image needs r0 < L/2",
            });
        }
        Ok(())
    }

    /// Truncated, shifted Lennard-Jones pair energy and dV/dr.
    pub fn wca(&self, r: f64) -> (f64, f64) {
        if r > self.r0() {
            return (0.0, 0.0);
        }
        let s6 = (self.sigma / r).powi(6);
        let s12 = s6 * s6;
        let v = 4.0 * self.epsilon * (s12 - s6) + self.epsilon;
        let dv = 4.0 * self.epsilon * (-12.0 * s12 + 6.0 * s6) / r;
        (v, dv)
    }

    /// Double-well dimer bond energy and dV/dr; minima at r₀ and r₀ + 2w.
    pub fn double_well(&self, r: f64) -> (f64, f64) {
        let u = r - self.r0() - self.w;
        let w2 = self.w * self.w;
        let bracket = 1.0 - u * u / w2;
        (self.h * bracket * bracket, -4.0 * self.h * bracket * u / w2)
    }

    /// Square-lattice start with the dimer bond at length r₀ along x.
    ///
    /// The lattice site right of particle 0 is skipped so the second dimer
    /// particle has room.
    pub fn lattice_configuration(&self) -> Vec<f64> {
        let n = self.n_particles;
        let per_side = ((n + 1) as f64).sqrt().ceil() as usize;
        let spacing = self.box_length / per_side as f64;
        let offset = 0.5 * spacing;
        let mut q = Vec::with_capacity(2 * n);
        q.extend_from_slice(&[offset, offset, offset + self.r0(), offset]);
        let sites = (0..per_side * per_side)
            .filter(|&s| s != 0 && s != 1)
            .map(|s| (s % per_side, s / per_side));
        for (i, j) in sites.take(n - 2) {
            q.push(offset + i as f64 * spacing);
            q.push(offset + j as f64 * spacing);
        }
        q
    }

    fn pair_vector(&self, q: &[f64], i: usize, j: usize) -> (f64, f64, f64) {
        let dx = minimum_image(q[2 * i] - q[2 * j], self.box_length);
        let dy = minimum_image(q[2 * i + 1] - q[2 * j + 1], self.box_length);
        (dx, dy, (dx * dx + dy * dy).sqrt())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DimerPotential {
    pub params: DimerParams,
}

impl DimerPotential {
    fn accumulate(&self, q: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64, TargetError> {
        let p = &self.params;
        let n = p.n_particles;
        let cutoff = p.r0();
        let mut energy = 0.0;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy, r) = p.pair_vector(q, i, j);
                let is_bond = i == 0 && j == 1;
                if !is_bond && r > cutoff {
                    continue;
                }
                if r < p.coincidence_floor {
                    return Err(TargetError::CoincidentParticles { i, j, distance: r });
                }
                let (v, dv) = if is_bond { p.double_well(r) } else { p.wca(r) };
                energy += v;
                if let Some(g) = grad.as_deref_mut() {
                    let (fx, fy) = (dv * dx / r, dv * dy / r);
                    g[2 * i] += fx;
                    g[2 * i + 1] += fy;
                    g[2 * j] -= fx;
                    g[2 * j + 1] -= fy;
                }
            }
        }
        Ok(energy)
    }
}

impl Potential for DimerPotential {
    fn energy(&self, x: &[f64]) -> Result<f64, TargetError> {
        self.accumulate(x, None)
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, TargetError> {
        self.accumulate(x, Some(grad))
    }
}

/// Dimer in solvent at inverse temperature `beta`; dimension 2N.
pub fn dimer_solvent(params: DimerParams, beta: f64) -> Result<Target, TargetError> {
    params.validate()?;
    Target::new(
        "dimer_solvent",
        Domain::torus(2 * params.n_particles, params.box_length)?,
        beta,
        Arc::new(DimerPotential { params }),
    )
}

/// ξ(q) = (|q₁ − q₂| − r₀)/(2w): 0 in the compact state, 1 when stretched.
pub fn reaction_coordinate(q: &[f64], params: &DimerParams) -> f64 {
    let (_, _, r) = params.pair_vector(q, 0, 1);
    (r - params.r0()) / (2.0 * params.w)
}
