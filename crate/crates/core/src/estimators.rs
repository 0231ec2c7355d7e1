//! Time averages, asymptotic-variance estimators and mean-square errors.
//!
//! Asymptotic variances are reported in continuous-time units: σ² such that
//! √T(π_T(f) − π(f)) ⇀ 𝒩(0, σ²) with T the simulated time.

use thiserror::Error;

use crate::integrators::Observer;
use crate::observables::Observable;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_964;
pub const MIN_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("empty sample")]
    Empty,
    #[error("need at least {required} chains, got {got}")]
    TooFewChains { required: usize, got: usize },
    #[error("need at least {required} completed batches, got {got}")]
    TooFewBatches { required: usize, got: usize },
    #[error("reference value must be finite, got {0}")]
    BadReference(f64),
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Streaming mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningAverage {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningAverage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Combines two accumulators as if their samples had been pushed into one.
    pub fn merge(&mut self, other: &RunningAverage) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count = n;
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

impl FromIterator<f64> for RunningAverage {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = RunningAverage::new();
        iter.into_iter().for_each(|v| acc.push(v));
        acc
    }
}

/// Non-overlapping batch averages of a single trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeansState {
    pub batch_size: u64,
    pub batch_means: Vec<f64>,
    current: RunningAverage,
}

impl BatchMeansState {
    pub fn new(batch_size: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        BatchMeansState {
            batch_size,
            batch_means: Vec::new(),
            current: RunningAverage::new(),
        }
    }

    /// ⌊√n⌋ batches of ⌊n/⌊√n⌋⌋ samples unless `batch_count` is given.
    pub fn for_samples(n_samples: u64, batch_count: Option<u64>) -> Self {
        let k = batch_count
            .unwrap_or_else(|| (n_samples as f64).sqrt().floor() as u64)
            .max(1);
        Self::new((n_samples / k).max(1))
    }

    pub fn push(&mut self, value: f64) {
        self.current.push(value);
        if self.current.count == self.batch_size {
            self.batch_means.push(self.current.mean);
            self.current = RunningAverage::new();
        }
    }

    pub fn completed(&self) -> usize {
        self.batch_means.len()
    }

    /// Mean over completed batches; the partial tail is discarded.
    pub fn mean(&self) -> Option<f64> {
        (!self.batch_means.is_empty()).then(|| time_average(&self.batch_means).unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    Ensemble,
    BatchMeans,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Ensemble => "ensemble",
            VarianceMethod::BatchMeans => "batch_means",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub estimate: f64,
    pub asym_var: f64,
    /// 95% interval for π(f).
    pub ci_low: f64,
    pub ci_high: f64,
    /// Approximate 95% interval for σ², σ̂²(1 ± z√(2/(n − 1))), clamped at 0.
    pub asym_var_ci: (f64, f64),
    pub method: VarianceMethod,
    pub n_effective: usize,
}

impl VarianceReport {
    fn build(estimate: f64, asym_var: f64, mean_sd: f64, n: usize, method: VarianceMethod) -> Self {
        let half = Z_95 * mean_sd;
        let rel = Z_95 * (2.0 / (n as f64 - 1.0)).sqrt();
        VarianceReport {
            estimate,
            asym_var,
            ci_low: estimate - half,
            ci_high: estimate + half,
            asym_var_ci: ((asym_var * (1.0 - rel)).max(0.0), asym_var * (1.0 + rel)),
            method,
            n_effective: n,
        }
    }

    pub fn variance_intervals_overlap(&self, other: &VarianceReport) -> bool {
        self.asym_var_ci.0 <= other.asym_var_ci.1 && other.asym_var_ci.0 <= self.asym_var_ci.1
    }

    pub fn mean_intervals_overlap(&self, other: &VarianceReport) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// (1/n) Σ values.
pub fn time_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(EstimatorError::Empty);
    }
    Ok(values.iter().copied().collect::<RunningAverage>().mean)
}

/// σ̂² = T · (sample variance of the per-chain averages).
pub fn ensemble_asymptotic_variance(estimates: &[f64], total_time: f64) -> Result<VarianceReport> {
    if estimates.len() < 2 {
        return Err(EstimatorError::TooFewChains {
            required: 2,
            got: estimates.len(),
        });
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(EstimatorError::NonPositive("total_time"));
    }
    let acc: RunningAverage = estimates.iter().copied().collect();
    let var = acc.sample_variance();
    let r = estimates.len();
    Ok(VarianceReport::build(
        acc.mean,
        total_time * var,
        (var / r as f64).sqrt(),
        r,
        VarianceMethod::Ensemble,
    ))
}

/// σ̂² = (batch_size·Δt)/(K − 1) · Σ_k (m_k − full_mean)².
pub fn batch_means_variance(state: &BatchMeansState, full_mean: f64, dt: f64) -> Result<VarianceReport> {
    let k = state.completed();
    if k < MIN_BATCHES {
        return Err(EstimatorError::TooFewBatches {
            required: MIN_BATCHES,
            got: k,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EstimatorError::NonPositive("dt"));
    }
    let batch_time = state.batch_size as f64 * dt;
    let ss: f64 = state.batch_means.iter().map(|m| (m - full_mean).powi(2)).sum();
    let asym_var = batch_time * ss / (k - 1) as f64;
    let total_time = batch_time * k as f64;
    Ok(VarianceReport::build(
        full_mean,
        asym_var,
        (asym_var / total_time).sqrt(),
        k,
        VarianceMethod::BatchMeans,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    /// None when every run blew up.
    pub mse: Option<f64>,
    pub relative_mse: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

/// Mean squared deviation of per-run estimates from `reference`. Runs given
/// as `None` (blowups) are excluded and counted.
pub fn mse(estimates: &[Option<f64>], reference: f64) -> Result<MseReport> {
    if estimates.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if !reference.is_finite() {
        return Err(EstimatorError::BadReference(reference));
    }
    let used: Vec<f64> = estimates.iter().flatten().copied().collect();
    let excluded = estimates.len() - used.len();
    if used.is_empty() {
        return Ok(MseReport {
            mse: None,
            relative_mse: None,
            used: 0,
            excluded,
        });
    }
    let value = used.iter().map(|e| (e - reference).powi(2)).sum::<f64>() / used.len() as f64;
    Ok(MseReport {
        mse: Some(value),
        relative_mse: (reference != 0.0).then(|| value / (reference * reference)),
        used: used.len(),
        excluded,
    })
}

/// Streams f(X⁽ⁿ⁾) after a burn-in into a running average and optional
/// batch means.
pub struct ChainAccumulator<'a> {
    observable: &'a dyn Observable,
    burn_in: u64,
    pub average: RunningAverage,
    pub batches: Option<BatchMeansState>,
}

impl<'a> ChainAccumulator<'a> {
    pub fn new(observable: &'a dyn Observable, burn_in: u64) -> Self {
        ChainAccumulator {
            observable,
            burn_in,
            average: RunningAverage::new(),
            batches: None,
        }
    }

    pub fn with_batches(mut self, batches: BatchMeansState) -> Self {
        self.batches = Some(batches);
        self
    }
}

impl Observer for ChainAccumulator<'_> {
    fn observe(&mut self, step: u64, x: &[f64]) {
        if step <= self.burn_in {
            return;
        }
        let v = self.observable.value(x);
        self.average.push(v);
        if let Some(b) = self.batches.as_mut() {
            b.push(v);
        }
    }
}
