//! Reference expectations π(f) for two-dimensional targets by tensor
//! trapezoid quadrature on nested grids.
//!
//! On a torus the periodic trapezoid rule covers one period. On the plane the
//! box comes from [`Potential::plane_bounds`] at `n_sd` standard deviations
//! per marginal; at the default 12 the discarded Gaussian tail mass is about
//! 4e−33, far below any tolerance in use.
//!
//! [`Potential::plane_bounds`]: crate::targets::Potential::plane_bounds

use rayon::prelude::*;
use thiserror::Error;

use crate::observables::Observable;
use crate::targets::{Target, TargetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("quadrature needs a two-dimensional target, got dimension {0}")]
    NotTwoDimensional(usize),
    #[error("no integration box known for target {0}; supply one explicitly")]
    NoBox(String),
    #[error("not converged at {grid} points per axis: error estimate {achieved:e} > {requested:e}")]
    NotConverged { grid: usize, achieved: f64, requested: f64 },
    #[error(transparent)]
    Target(#[from] TargetError),
}

pub type Result<T> = std::result::Result<T, ReferenceError>;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    /// Points per axis on the coarsest grid.
    pub grid_per_axis: usize,
    pub max_grid_per_axis: usize,
    /// Explicit integration box; derived from the target when `None`.
    pub domain_box: Option<[(f64, f64); 2]>,
    /// Plane truncation in standard deviations per marginal.
    pub n_sd: f64,
    /// Requested error relative to max(|value|, 1).
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            grid_per_axis: 64,
            max_grid_per_axis: 4096,
            domain_box: None,
            n_sd: 12.0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureValue {
    pub value: f64,
    pub error_estimate: f64,
    pub grid_per_axis: usize,
}

struct Grid {
    lo: [f64; 2],
    h: [f64; 2],
    n: usize,
    periodic: bool,
}

impl Grid {
    fn new(bounds: [(f64, f64); 2], n: usize, periodic: bool) -> Self {
        let (lo, h): (Vec<f64>, Vec<f64>) = bounds
            .iter()
            .map(|&(a, b)| {
                (
                    a,
                    if periodic {
                        (b - a) / n as f64
                    } else {
                        (b - a) / (n - 1) as f64
                    },
                )
            })
            .unzip();
        Grid {
            lo: [lo[0], lo[1]],
            h: [h[0], h[1]],
            n,
            periodic,
        }
    }

    fn weight(&self, i: usize) -> f64 {
        if !self.periodic && (i == 0 || i == self.n - 1) {
            0.5
        } else {
            1.0
        }
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// (Σ w e^{−β(V−shift)}, Σ w f e^{−β(V−shift)}) times the cell area.
fn grid_sums(target: &Target, f: Option<&dyn Observable>, grid: &Grid, shift: f64) -> Result<(f64, f64)> {
    let beta = target.beta();
    let rows: Vec<(f64, f64)> = (0..grid.n)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let x1 = grid.lo[0] + i as f64 * grid.h[0];
            let mut zs = Vec::with_capacity(grid.n);
            let mut fs = Vec::with_capacity(grid.n);
            for j in 0..grid.n {
                let x = [x1, grid.lo[1] + j as f64 * grid.h[1]];
                let w = grid.weight(j) * (-beta * (target.energy(&x)? - shift)).exp();
                zs.push(w);
                if let Some(f) = f {
                    fs.push(w * f.value(&x));
                }
            }
            let wi = grid.weight(i);
            Ok((wi * pairwise_sum(&zs), wi * pairwise_sum(&fs)))
        })
        .collect::<Result<_>>()?;
    let (z, fz): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let area = grid.h[0] * grid.h[1];
    Ok((area * pairwise_sum(&z), area * pairwise_sum(&fz)))
}

fn integration_box(target: &Target, spec: &QuadratureSpec) -> Result<([(f64, f64); 2], bool)> {
    if target.dim() != 2 {
        return Err(ReferenceError::NotTwoDimensional(target.dim()));
    }
    if let Some(period) = target.domain().period() {
        return Ok(([(0.0, period), (0.0, period)], true));
    }
    spec.domain_box
        .or_else(|| target.potential().plane_bounds(spec.n_sd))
        .map(|b| (b, false))
        .ok_or_else(|| ReferenceError::NoBox(target.name().to_string()))
}

fn minimum_energy(target: &Target, bounds: [(f64, f64); 2], periodic: bool) -> Result<f64> {
    let grid = Grid::new(bounds, 129, periodic);
    let mut v_min = f64::INFINITY;
    for i in 0..grid.n {
        for j in 0..grid.n {
            let x = [grid.lo[0] + i as f64 * grid.h[0], grid.lo[1] + j as f64 * grid.h[1]];
            v_min = v_min.min(target.energy(&x)?);
        }
    }
    Ok(v_min)
}

/// Refines n → 2n until successive values of `pick(Z, ∫fπ̃)` agree.
fn refine<P>(target: &Target, f: Option<&dyn Observable>, spec: &QuadratureSpec, pick: P) -> Result<QuadratureValue>
where
    P: Fn(f64, f64, f64) -> f64,
{
    let (bounds, periodic) = integration_box(target, spec)?;
    let shift = minimum_energy(target, bounds, periodic)?;
    let mut n = spec.grid_per_axis.max(4);
    let eval = |n: usize| -> Result<f64> {
        let (z, fz) = grid_sums(target, f, &Grid::new(bounds, n, periodic), shift)?;
        Ok(pick(z, fz, shift))
    };
    let mut coarse = eval(n)?;
    loop {
        let fine = eval(2 * n)?;
        let err = (fine - coarse).abs();
        let requested = spec.tol * fine.abs().max(1.0);
        if err <= requested {
            return Ok(QuadratureValue {
                value: fine,
                error_estimate: err,
                grid_per_axis: 2 * n,
            });
        }
        if 2 * n >= spec.max_grid_per_axis {
            return Err(ReferenceError::NotConverged {
                grid: 2 * n,
                achieved: err,
                requested,
            });
        }
        n *= 2;
        coarse = fine;
    }
}

/// π(f) = ∬ f e^{−βV} / ∬ e^{−βV}.
pub fn expectation_2d(target: &Target, f: &dyn Observable, spec: &QuadratureSpec) -> Result<QuadratureValue> {
    refine(target, Some(f), spec, |z, fz, _| fz / z)
}

/// Z = ∬ e^{−βV}. Diagnostic only; no sampler needs it.
pub fn normalization_2d(target: &Target, spec: &QuadratureSpec) -> Result<QuadratureValue> {
    let beta = target.beta();
    refine(target, None, spec, move |z, _, shift| z * (-beta * shift).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::{NormSquared, PeriodicF};
    use crate::targets::{flat_torus, periodic_2d, standard_gaussian, warped_gaussian};
    use std::f64::consts::PI;

    #[test]
    fn standard_gaussian_moments() {
        let t = standard_gaussian(2).unwrap();
        let spec = QuadratureSpec::default();
        let e = expectation_2d(&t, &NormSquared, &spec).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8, "{e:?}");
        let z = normalization_2d(&t, &spec).unwrap();
        assert!((z.value - 2.0 * PI).abs() < 1e-8 * 2.0 * PI, "{z:?}");
    }

    #[test]
    fn flat_torus_normalization() {
        let t = flat_torus(2, 1.0).unwrap();
        let z = normalization_2d(&t, &QuadratureSpec::default()).unwrap();
        assert!((z.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn warped_gaussian_closed_forms() {
        // z = x₂ + b x₁² − 100b: x₁ ~ 𝒩(0, 50) and z ~ 𝒩(0, ½) independently,
        // so E|x|² = 50 + ½ + E(5 − x₁²/20)² = 69.25 and Z = √(100π)·√π.
        let t = warped_gaussian(0.05).unwrap();
        let spec = QuadratureSpec::default();
        let e = expectation_2d(&t, &NormSquared, &spec).unwrap();
        assert!((e.value - 69.25).abs() < 1e-6, "{e:?}");
        let z = normalization_2d(&t, &spec).unwrap();
        assert!((z.value - 10.0 * PI).abs() < 1e-6, "{z:?}");
    }

    #[test]
    fn periodic_reference_converges() {
        let t = periodic_2d(10.0).unwrap();
        let spec = QuadratureSpec::default();
        let e = expectation_2d(&t, &PeriodicF, &spec).unwrap();
        assert!(e.error_estimate <= 1e-8 * e.value.abs());
        // independent 1024² periodic grid
        let n = 1024;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let x = [i as f64 / n as f64, j as f64 / n as f64];
                let w = (-10.0 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).exp();
                num += w * PeriodicF.value(&x);
                den += w;
            }
        }
        assert!((e.value - num / den).abs() < 1e-8, "{} vs {}", e.value, num / den);
    }

    #[test]
    fn trapezoid_refinement_is_second_order_or_better() {
        // f has a kink at the seam, which caps the periodic rule at second order
        let t = periodic_2d(1.0).unwrap();
        let f = |x: &[f64]| (x[0] - 0.5).powi(2);
        let bounds = [(0.0, 1.0), (0.0, 1.0)];
        let value = |n| {
            let (z, fz) = grid_sums(&t, Some(&f), &Grid::new(bounds, n, true), 0.0).unwrap();
            fz / z
        };
        let (a, b, c) = (value(16), value(32), value(64));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(ratio >= 3.5, "{ratio}");
    }

    #[test]
    fn rejects_wrong_dimension_and_missing_box() {
        let t = standard_gaussian(3).unwrap();
        assert_eq!(
            expectation_2d(&t, &NormSquared, &QuadratureSpec::default()).unwrap_err(),
            ReferenceError::NotTwoDimensional(3)
        );
        let spec = QuadratureSpec {
            max_grid_per_axis: 16,
            tol: 1e-15,
            ..QuadratureSpec::default()
        };
        let t = warped_gaussian(0.05).unwrap();
        assert!(matches!(
            normalization_2d(
                &t,
                &QuadratureSpec {
                    grid_per_axis: 8,
                    ..spec
                }
            ),
            Err(ReferenceError::NotConverged { grid: 16, .. })
        ));
    }
}
