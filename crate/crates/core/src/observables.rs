//! Scalar observables f whose expectations π(f) the samplers estimate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::perturbations::{check_symmetric, PerturbationError};
use crate::targets::{reaction_coordinate, DimerParams};

pub trait Observable: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> Observable for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// f(x) = x·Mx + l·x + k
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObservable {
    m: DMatrix<f64>,
    l: DVector<f64>,
    k: f64,
}

impl QuadraticObservable {
    pub fn new(m: DMatrix<f64>, l: DVector<f64>, k: f64) -> Result<Self, PerturbationError> {
        check_symmetric(&m, 1e-12)?;
        if l.len() != m.nrows() {
            return Err(PerturbationError::InvalidInput(format!(
                "l has length {}, M is {}x{}",
                l.len(),
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(QuadraticObservable { m, l, k })
    }

    /// k = −Tr M, so that π(f) = 0 under 𝒩(0, I).
    pub fn centered(m: DMatrix<f64>, l: DVector<f64>) -> Result<Self, PerturbationError> {
        let k = -m.trace();
        Self::new(m, l, k)
    }

    pub fn dim(&self) -> usize {
        self.l.len()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn l(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Expectation under the standard Gaussian: Tr M + k.
    pub fn gaussian_mean(&self) -> f64 {
        self.m.trace() + self.k
    }
}

impl Observable for QuadraticObservable {
    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = self.k;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.m[(i, j)] * x[j];
            }
            s += x[i] * row + self.l[i] * x[i];
        }
        s
    }
}

/// f(x) = |x|²
#[derive(Debug, Clone, Copy, Default)]
pub struct NormSquared;

impl Observable for NormSquared {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
}

/// f(x) = 1 + 4 sin²(4πx₁) + 4 cos²(4πx₂) on the unit torus.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeriodicF;

impl Observable for PeriodicF {
    fn value(&self, x: &[f64]) -> f64 {
        let s = (4.0 * PI * x[0]).sin();
        let c = (4.0 * PI * x[1]).cos();
        1.0 + 4.0 * s * s + 4.0 * c * c
    }
}

/// Dimer bond-length coordinate ξ(q) = (|q₁ − q₂| − r₀)/(2w).
#[derive(Debug, Clone, Copy)]
pub struct ReactionCoordinate(pub DimerParams);

impl Observable for ReactionCoordinate {
    fn value(&self, x: &[f64]) -> f64 {
        reaction_coordinate(x, &self.0)
    }
}

/// f(x) = Σ_i c_i x_i
#[derive(Debug, Clone, PartialEq)]
pub struct Linear(pub Vec<f64>);

impl Observable for Linear {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}
