//! Divergence-free perturbations γ of overdamped Langevin dynamics.
//!
//! The perturbed dynamics is dX = (−∇V + αγ) dt + √(2/β) dW, which keeps
//! π ∝ e^{−βV} whenever ∇·(γπ) = 0. For the constant-matrix family
//! γ(x) = −J∇V(x) = β⁻¹J∇log π(x) the drift is b(x) = −(I + αJ)∇V(x).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::targets::{Target, TargetError};

/// Entrywise tolerance on |J + Jᵀ|.
pub const ANTISYMMETRY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbationError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("not antisymmetric: J[{i}][{j}] + J[{j}][{i}] = {residual:e}")]
    NotAntisymmetric { i: usize, j: usize, residual: f64 },
    #[error("matrix is not symmetric: M[{i}][{j}] - M[{j}][{i}] = {residual:e}")]
    NotSymmetric { i: usize, j: usize, residual: f64 },
    #[error("dimension {0} must be even")]
    OddDimension(usize),
    #[error("{0}")]
    InvalidInput(String),
    #[error("matrix field not antisymmetric at probe point {point}: {source}")]
    FieldNotAntisymmetric {
        point: usize,
        #[source]
        source: Box<PerturbationError>,
    },
}

/// A real d×d matrix with Jᵀ = −J.
#[derive(Debug, Clone, PartialEq)]
pub struct AntisymmetricMatrix(DMatrix<f64>);

impl AntisymmetricMatrix {
    /// Accepts the matrix iff |J_ij + J_ji| ≤ 1e−14 for all entries.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, PerturbationError> {
        check_antisymmetric(&matrix, ANTISYMMETRY_TOL)?;
        Ok(AntisymmetricMatrix(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PerturbationError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(PerturbationError::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn zeros(dim: usize) -> Self {
        AntisymmetricMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// out = J·v
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut s = 0.0;
            for (j, vj) in v.iter().enumerate() {
                s += self.0[(i, j)] * vj;
            }
            *o = s;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AntisymmetricMatrix(&self.0 * factor)
    }
}

fn check_antisymmetric(m: &DMatrix<f64>, tol: f64) -> Result<(), PerturbationError> {
    if !m.is_square() {
        return Err(PerturbationError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            let residual = m[(i, j)] + m[(j, i)];
            if residual.abs() > tol || !residual.is_finite() {
                return Err(PerturbationError::NotAntisymmetric { i, j, residual });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<(), PerturbationError> {
    if !m.is_square() {
        return Err(PerturbationError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let residual = m[(i, j)] - m[(j, i)];
            if residual.abs() > tol || !residual.is_finite() {
                return Err(PerturbationError::NotSymmetric { i, j, residual });
            }
        }
    }
    Ok(())
}

/// [[0, 1], [−1, 0]]
pub fn rotation_2d() -> AntisymmetricMatrix {
    AntisymmetricMatrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
}

/// Unit-Frobenius 3×3 generator whose nullspace is span(1, −1, 1).
pub fn j_linear_3d() -> AntisymmetricMatrix {
    let s = 1.0 / 6f64.sqrt();
    AntisymmetricMatrix(DMatrix::from_row_slice(3, 3, &[0.0, s, s, -s, 0.0, s, -s, -s, 0.0]))
}

/// J = (l̃⊗ω − ω⊗l̃)/√2 with l̃ = l/|l|; JᵀJ is half the projector onto span{l, ω}.
pub fn optimal_linear(l: &[f64], omega: &[f64]) -> Result<AntisymmetricMatrix, PerturbationError> {
    if l.len() != omega.len() {
        return Err(PerturbationError::InvalidInput(format!(
            "l has length {}, omega has length {}",
            l.len(),
            omega.len()
        )));
    }
    let l = DVector::from_column_slice(l);
    let omega = DVector::from_column_slice(omega);
    let l_norm = l.norm();
    if !(l_norm > 0.0) {
        return Err(PerturbationError::InvalidInput("l must be nonzero".into()));
    }
    if (omega.norm() - 1.0).abs() > 1e-12 {
        return Err(PerturbationError::InvalidInput(format!(
            "omega must be a unit vector, |omega| = {}",
            omega.norm()
        )));
    }
    let lt = l / l_norm;
    let dot = lt.dot(&omega);
    if dot.abs() > 1e-12 {
        return Err(PerturbationError::InvalidInput(format!(
            "omega must be orthogonal to l, l̃·omega = {dot:e}"
        )));
    }
    let j = (&lt * omega.transpose() - &omega * lt.transpose()) / 2f64.sqrt();
    AntisymmetricMatrix::new(j)
}

/// Pairs the eigenvectors of a symmetric M (eigenvalues ascending) as
/// (1, d), (2, d−1), … and sums the corresponding plane rotation generators.
///
/// JᵀJ = I for the result. Eigenvalue ties fall back to the decomposition's
/// index order.
pub fn quasi_optimal_quadratic(m: &DMatrix<f64>) -> Result<AntisymmetricMatrix, PerturbationError> {
    check_symmetric(m, 1e-12)?;
    let d = m.nrows();
    if d % 2 != 0 {
        return Err(PerturbationError::OddDimension(d));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps decomposition order on ties
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut j = DMatrix::zeros(d, d);
    for k in 0..d / 2 {
        let ei = eig.eigenvectors.column(order[k]);
        let ej = eig.eigenvectors.column(order[d - 1 - k]);
        j += ei * ej.transpose() - ej * ei.transpose();
    }
    // remove rounding asymmetry from the outer products
    let j = (&j - j.transpose()) * 0.5;
    AntisymmetricMatrix::new(j)
}

/// Block-circulant 2N×2N generator: I₂ on the block superdiagonal, −I₂ on the
/// subdiagonal, −I₂ top-right and I₂ bottom-left.
pub fn block_circulant_j1(n_particles: usize) -> Result<AntisymmetricMatrix, PerturbationError> {
    if n_particles < 3 {
        return Err(PerturbationError::InvalidInput(format!(
            "block-circulant generator needs N >= 3, got {n_particles}"
        )));
    }
    let n = n_particles;
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for b in 0..n {
        let next = (b + 1) % n;
        for c in 0..2 {
            j[(2 * b + c, 2 * next + c)] += 1.0;
            j[(2 * next + c, 2 * b + c)] -= 1.0;
        }
    }
    AntisymmetricMatrix::new(j)
}

/// Rotation acting only on the two dimer particles: top-left 4×4 block
/// [[0,0,1,0],[0,0,0,1],[−1,0,0,0],[0,−1,0,0]], zero elsewhere.
pub fn dimer_rotation_j2(n_particles: usize) -> Result<AntisymmetricMatrix, PerturbationError> {
    if n_particles < 2 {
        return Err(PerturbationError::InvalidInput(format!(
            "dimer rotation needs N >= 2, got {n_particles}"
        )));
    }
    let mut j = DMatrix::zeros(2 * n_particles, 2 * n_particles);
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    j[(2, 0)] = -1.0;
    j[(3, 1)] = -1.0;
    AntisymmetricMatrix::new(j)
}

pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum PerturbationKind {
    None,
    /// γ(x) = −J∇V(x)
    LinearJ(AntisymmetricMatrix),
    /// γ(x) = J∇V(x)·ψ(V(x))
    PsiTruncated {
        j: AntisymmetricMatrix,
        psi: ScalarMap,
    },
    /// γ(x) = −J(x)∇V(x) + β⁻¹∇·J(x), with (∇·J)_i = Σ_j ∂_j J_ij
    MatrixField {
        field: MatrixField,
        divergence: VectorField,
    },
}

impl fmt::Debug for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationKind::None => write!(f, "None"),
            PerturbationKind::LinearJ(j) => f.debug_tuple("LinearJ").field(j).finish(),
            PerturbationKind::PsiTruncated { j, .. } => {
                f.debug_struct("PsiTruncated").field("j", j).finish_non_exhaustive()
            }
            PerturbationKind::MatrixField { .. } => write!(f, "MatrixField {{ .. }}"),
        }
    }
}

/// A flow γ together with its strength α.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub alpha: f64,
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation {
            kind: PerturbationKind::None,
            alpha: 0.0,
        }
    }

    pub fn linear(j: AntisymmetricMatrix, alpha: f64) -> Self {
        Perturbation {
            kind: PerturbationKind::LinearJ(j),
            alpha,
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Perturbation {
            kind: self.kind.clone(),
            alpha,
        }
    }

    /// True when αγ vanishes identically.
    pub fn is_trivial(&self) -> bool {
        matches!(self.kind, PerturbationKind::None) || self.alpha == 0.0
    }

    pub fn matrix(&self) -> Option<&AntisymmetricMatrix> {
        match &self.kind {
            PerturbationKind::LinearJ(j) | PerturbationKind::PsiTruncated { j, .. } => Some(j),
            _ => None,
        }
    }

    /// Writes the unscaled flow γ(x) into `out`, given ∇V(x) and V(x).
    pub fn flow(&self, x: &[f64], grad: &[f64], potential: f64, beta: f64, out: &mut [f64]) {
        match &self.kind {
            PerturbationKind::None => out.fill(0.0),
            PerturbationKind::LinearJ(j) => {
                j.apply(grad, out);
                out.iter_mut().for_each(|v| *v = -*v);
            }
            PerturbationKind::PsiTruncated { j, psi } => {
                j.apply(grad, out);
                let s = psi(potential);
                out.iter_mut().for_each(|v| *v *= s);
            }
            PerturbationKind::MatrixField { field, divergence } => {
                let jx = field(x);
                let div = divergence(x);
                for (i, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (k, g) in grad.iter().enumerate() {
                        s += jx[(i, k)] * g;
                    }
                    *o = -s + div[i] / beta;
                }
            }
        }
    }

    /// b(x) = −∇V(x) + αγ(x) written into `out`.
    pub fn drift(&self, x: &[f64], grad: &[f64], potential: f64, beta: f64, out: &mut [f64]) {
        if self.is_trivial() {
            for (o, g) in out.iter_mut().zip(grad) {
                *o = -g;
            }
            return;
        }
        self.flow(x, grad, potential, beta, out);
        for (o, g) in out.iter_mut().zip(grad) {
            *o = -g + self.alpha * *o;
        }
    }
}

/// γ(x) = J∇V(x)·ψ(V(x)); ψ ≥ 0 with ψ(V)|∇V| ≤ 1 gives a bounded flow.
pub fn psi_truncated_flow(j: AntisymmetricMatrix, psi: ScalarMap, alpha: f64) -> Perturbation {
    Perturbation {
        kind: PerturbationKind::PsiTruncated { j, psi },
        alpha,
    }
}

/// γ(x) = −J(x)∇V(x) + β⁻¹∇·J(x). The field is checked for antisymmetry at
/// each probe point.
pub fn matrix_field_flow(
    field: MatrixField,
    divergence: VectorField,
    probe_points: &[Vec<f64>],
    alpha: f64,
) -> Result<Perturbation, PerturbationError> {
    for (point, x) in probe_points.iter().enumerate() {
        check_antisymmetric(&field(x), ANTISYMMETRY_TOL).map_err(|e| PerturbationError::FieldNotAntisymmetric {
            point,
            source: Box::new(e),
        })?;
    }
    Ok(Perturbation {
        kind: PerturbationKind::MatrixField { field, divergence },
        alpha,
    })
}

/// b(x) = −∇V(x) + αγ(x) for a fixed target and perturbation.
#[derive(Debug, Clone)]
pub struct Drift<'a> {
    pub target: &'a Target,
    pub perturbation: &'a Perturbation,
}

impl<'a> Drift<'a> {
    pub fn new(target: &'a Target, perturbation: &'a Perturbation) -> Self {
        Drift { target, perturbation }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, TargetError> {
        let d = self.target.dim();
        let mut grad = vec![0.0; d];
        let v = self.target.energy_and_gradient(x, &mut grad)?;
        let mut out = vec![0.0; d];
        self.perturbation.drift(x, &grad, v, self.target.beta(), &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    /// max over points of |∇·(γπ̃)| / π̃
    pub max_residual: f64,
    pub worst_point: Option<Vec<f64>>,
    pub tolerance: f64,
    pub passed: bool,
}

pub const DIVERGENCE_TOL: f64 = 1e-4;
pub const DIVERGENCE_STEP: f64 = 1e-4;

/// Central-difference check of ∇·(γπ̃) = 0 relative to the local density.
///
/// The ratio is formed as Σ_i [γ_i π̃(x + h e_i) − γ_i π̃(x − h e_i)] / (2h π̃(x))
/// with π̃ ratios taken as exp(−βΔV), so no density ever underflows.
pub fn check_divergence_free(
    perturbation: &Perturbation,
    target: &Target,
    points: &[Vec<f64>],
    step: f64,
    tolerance: f64,
) -> Result<DivergenceReport, TargetError> {
    let d = target.dim();
    let beta = target.beta();
    let mut grad = vec![0.0; d];
    let mut gamma = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut worst = (0.0f64, None);
    for x in points {
        let v0 = target.energy(x)?;
        let mut div = 0.0;
        for i in 0..d {
            let mut side = |sign: f64| -> Result<f64, TargetError> {
                shifted.copy_from_slice(x);
                shifted[i] += sign * step;
                let v = target.energy_and_gradient(&shifted, &mut grad)?;
                perturbation.flow(&shifted, &grad, v, beta, &mut gamma);
                Ok(gamma[i] * (-beta * (v - v0)).exp())
            };
            div += (side(1.0)? - side(-1.0)?) / (2.0 * step);
        }
        if !(div.abs() <= worst.0) {
            worst = (div.abs(), Some(x.clone()));
        }
    }
    Ok(DivergenceReport {
        max_residual: worst.0,
        worst_point: worst.1,
        tolerance,
        passed: worst.0 < tolerance,
    })
}
