//! Closed-form asymptotic variances for the linear diffusion
//! dX = −(I + αJ)X dt + √2 dW and quadratic observables f(x) = x·Mx + l·x + k.
//!
//! Throughout, A = I − αJ is the matrix of the Poisson problem, so that the
//! quadratic part P of the Poisson solution solves AP + PAᵀ = M.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

use crate::perturbations::{check_symmetric, AntisymmetricMatrix, PerturbationError};
use crate::quad;

pub const MAX_LYAPUNOV_DIM: usize = 32;
/// Singular values below this fraction of the largest are treated as zero.
pub const NULLSPACE_RTOL: f64 = 1e-10;
pub const LIMIT_PROBES: (f64, f64) = (1e6, 1e8);
pub const LIMIT_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("A has an eigenvalue with non-positive real part: {re} + {im}i")]
    Spectrum { re: f64, im: f64 },
    #[error("dimension {got} exceeds the supported maximum {max}")]
    TooLarge { got: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular linear system")]
    Singular,
    #[error("large-alpha probes disagree: sigma2(1e6) = {at_low}, sigma2(1e8) = {at_high}")]
    NoLimit { at_low: f64, at_high: f64 },
    #[error("quadrature did not converge: error estimate {error:e}")]
    Quadrature { error: f64 },
    #[error(transparent)]
    Input(#[from] PerturbationError),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

fn check_dims(m: &DMatrix<f64>, l: &DVector<f64>, j: &AntisymmetricMatrix) -> Result<usize> {
    let d = m.nrows();
    if m.ncols() != d || l.len() != d || j.dim() != d {
        return Err(GaussianError::Dimension(format!(
            "M is {}x{}, l has length {}, J is {}x{}",
            m.nrows(),
            m.ncols(),
            l.len(),
            j.dim(),
            j.dim()
        )));
    }
    check_symmetric(m, 1e-12)?;
    Ok(d)
}

/// A = I − αJ
pub fn poisson_matrix(j: &AntisymmetricMatrix, alpha: f64) -> DMatrix<f64> {
    let d = j.dim();
    DMatrix::identity(d, d) - j.matrix() * alpha
}

/// Solves AP + PAᵀ = M through the d²×d² Kronecker system
/// (I ⊗ A + A ⊗ I) vec P = vec M.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if !a.is_square() || m.shape() != (d, d) {
        return Err(GaussianError::Dimension(format!(
            "A is {:?}, M is {:?}",
            a.shape(),
            m.shape()
        )));
    }
    if d > MAX_LYAPUNOV_DIM {
        return Err(GaussianError::TooLarge {
            got: d,
            max: MAX_LYAPUNOV_DIM,
        });
    }
    check_symmetric(m, 1e-12)?;
    if let Some(bad) = a.complex_eigenvalues().iter().find(|z| !(z.re > 0.0)) {
        return Err(GaussianError::Spectrum { re: bad.re, im: bad.im });
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_column_slice(m.as_slice());
    let vec_p = k.lu().solve(&rhs).ok_or(GaussianError::Singular)?;
    let p = DMatrix::from_column_slice(d, d, vec_p.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// φ(x) = x·Cx + D·x + constant solving −ℒφ = f − π(f) for the centered
/// quadratic observable, with ℒ the generator of the perturbed diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonResiduals {
    /// ‖sym(A(C + Cᵀ)) − M‖_F
    pub quadratic: f64,
    /// ‖AD − l‖
    pub linear: f64,
    /// |Tr C − Tr M / 2|
    pub trace: f64,
}

impl PoissonSolution {
    pub fn residuals(
        &self,
        m: &DMatrix<f64>,
        l: &DVector<f64>,
        j: &AntisymmetricMatrix,
        alpha: f64,
    ) -> PoissonResiduals {
        let a = poisson_matrix(j, alpha);
        let ac = &a * (&self.c + self.c.transpose());
        let sym = (&ac + ac.transpose()) * 0.5;
        PoissonResiduals {
            quadratic: (sym - m).norm(),
            linear: (&a * &self.d - l).norm(),
            trace: (self.c.trace() - m.trace() / 2.0).abs(),
        }
    }
}

pub fn poisson_solution(
    m: &DMatrix<f64>,
    l: &DVector<f64>,
    j: &AntisymmetricMatrix,
    alpha: f64,
) -> Result<PoissonSolution> {
    check_dims(m, l, j)?;
    let a = poisson_matrix(j, alpha);
    let c = solve_lyapunov(&a, m)?;
    let d = a.lu().solve(l).ok_or(GaussianError::Singular)?;
    let constant = -c.trace();
    Ok(PoissonSolution { c, d, constant })
}

/// 2 l·(I + α²JᵀJ)⁻¹ l, evaluated through the singular vectors of J so that
/// it stays accurate for very large α.
pub fn linear_variance_term(l: &DVector<f64>, j: &AntisymmetricMatrix, alpha: f64) -> f64 {
    let svd = SVD::new(j.matrix().clone(), false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut sum = 0.0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        let proj = v_t.row(k).dot(&l.transpose());
        let damp = 1.0 + (alpha * s) * (alpha * s);
        sum += proj * proj / damp;
    }
    2.0 * sum
}

/// ‖l_𝒩‖², the squared norm of the projection of l onto the nullspace of J.
pub fn nullspace_projection_norm_sq(l: &DVector<f64>, j: &AntisymmetricMatrix) -> f64 {
    let svd = SVD::new(j.matrix().clone(), false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let s_max = svd.singular_values.max();
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= NULLSPACE_RTOL * s_max || s_max == 0.0)
        .map(|(k, _)| v_t.row(k).dot(&l.transpose()).powi(2))
        .sum()
}

/// σ²_f(α) = 2 Tr(PM) + 2 l·(I + α²JᵀJ)⁻¹ l.
///
/// At α = 0 this is ‖M‖²_F + 2‖l‖². The central-limit variance of the
/// quadratic part is twice the trace term; see [`clt_asymptotic_variance`].
pub fn asymptotic_variance_quadratic(
    m: &DMatrix<f64>,
    l: &DVector<f64>,
    j: &AntisymmetricMatrix,
    alpha: f64,
) -> Result<f64> {
    let sol = poisson_solution(m, l, j, alpha)?;
    Ok(2.0 * (&sol.c * m).trace() + linear_variance_term(l, j, alpha))
}

/// Variance of the Gaussian limit of √T(π_T(f) − π(f)) for the linear
/// diffusion: 2π(|∇φ|²) = 4 Tr(PM) + 2 l·(I + α²JᵀJ)⁻¹ l.
pub fn clt_asymptotic_variance(m: &DMatrix<f64>, l: &DVector<f64>, j: &AntisymmetricMatrix, alpha: f64) -> Result<f64> {
    let sol = poisson_solution(m, l, j, alpha)?;
    Ok(4.0 * (&sol.c * m).trace() + linear_variance_term(l, j, alpha))
}

pub const INTEGRAL_TRUNCATION: f64 = 1e-14;

/// Same quantity as [`asymptotic_variance_quadratic`], with the trace term
/// evaluated as 2∫₀^∞ e^{−2s} Tr[e^{αJs} M e^{−αJs} M] ds by adaptive
/// Gauss–Kronrod quadrature and matrix exponentials.
pub fn asymptotic_variance_integral(
    m: &DMatrix<f64>,
    l: &DVector<f64>,
    j: &AntisymmetricMatrix,
    alpha: f64,
) -> Result<f64> {
    check_dims(m, l, j)?;
    let m_norm_sq = m.norm_squared();
    let trace_term = if m_norm_sq == 0.0 {
        0.0
    } else {
        let s_max = 0.5 * (m_norm_sq / INTEGRAL_TRUNCATION).ln().max(0.0);
        let aj = j.matrix() * alpha;
        let integrand = |s: f64| {
            let e = (&aj * s).exp();
            let rotated = &e * m * e.transpose();
            (-2.0 * s).exp() * rotated.dot(m)
        };
        let r = quad::integrate(integrand, 0.0, s_max, 1e-13 * m_norm_sq, 0.0, 20_000);
        if !r.converged {
            return Err(GaussianError::Quadrature { error: r.error });
        }
        2.0 * r.value
    };
    Ok(trace_term + linear_variance_term(l, j, alpha))
}

/// lim_{α→∞} σ²_f(α), probed at α = 10⁸ and checked against α = 10⁶.
///
/// The probes must agree to 1e−4 relative to max(|σ²(10⁸)|, σ²(0)); the linear
/// part must also match its exact limit 2‖l_𝒩‖² to the same tolerance.
pub fn variance_limit(m: &DMatrix<f64>, l: &DVector<f64>, j: &AntisymmetricMatrix) -> Result<f64> {
    let (lo, hi) = LIMIT_PROBES;
    let at_zero = asymptotic_variance_quadratic(m, l, j, 0.0)?;
    let at_low = asymptotic_variance_quadratic(m, l, j, lo)?;
    let at_high = asymptotic_variance_quadratic(m, l, j, hi)?;
    let scale = at_high.abs().max(at_zero);
    if (at_low - at_high).abs() > LIMIT_RTOL * scale {
        return Err(GaussianError::NoLimit { at_low, at_high });
    }
    let linear_exact = 2.0 * nullspace_projection_norm_sq(l, j);
    let linear_probe = linear_variance_term(l, j, hi);
    if (linear_exact - linear_probe).abs() > LIMIT_RTOL * scale.max(f64::MIN_POSITIVE) {
        return Err(GaussianError::NoLimit { at_low, at_high });
    }
    Ok(at_high)
}

/// λ↓(M)·λ↑(M) + 2‖l_𝒩‖²: eigenvalues paired largest with smallest.
pub fn variance_lower_bound(m: &DMatrix<f64>, l: &DVector<f64>, j: &AntisymmetricMatrix) -> Result<f64> {
    check_dims(m, l, j)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let paired: f64 = eig.iter().zip(eig.iter().rev()).map(|(a, b)| a * b).sum();
    Ok(paired + 2.0 * nullspace_projection_norm_sq(l, j))
}

/// 4(1 + 1/(1 + α²)): f(x) = 2x₁² under the rotationally perturbed
/// two-dimensional standard Gaussian.
pub fn polar_example_variance(alpha: f64) -> f64 {
    4.0 * (1.0 + 1.0 / (1.0 + alpha * alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    pub alphas: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub limit_inf: f64,
    pub lower_bound: f64,
}

impl VarianceCurve {
    pub fn new(m: &DMatrix<f64>, l: &DVector<f64>, j: &AntisymmetricMatrix, alphas: &[f64]) -> Result<Self> {
        let sigma2 = alphas
            .iter()
            .map(|&a| asymptotic_variance_quadratic(m, l, j, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(VarianceCurve {
            alphas: alphas.to_vec(),
            sigma2,
            limit_inf: variance_limit(m, l, j)?,
            lower_bound: variance_lower_bound(m, l, j)?,
        })
    }

    /// Non-increasing in |α| along the grid, up to `tol` relative slack.
    pub fn is_non_increasing(&self, tol: f64) -> bool {
        let mut pts: Vec<(f64, f64)> = self
            .alphas
            .iter()
            .map(|a| a.abs())
            .zip(self.sigma2.iter().copied())
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[1].1 <= w[0].1 + tol * w[0].1.abs().max(1.0))
    }

    pub fn above_lower_bound(&self, tol: f64) -> bool {
        self.sigma2
            .iter()
            .all(|&s| s >= self.lower_bound - tol * self.lower_bound.abs().max(1.0))
    }
}
