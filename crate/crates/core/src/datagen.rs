//! Synthetic benchmark data: a heteroscedastic Gaussian-process generator
//! with a known mean function and noise profile, plus a small flux-like
//! surrogate profile. Both expose the exact truth so predicted intervals can
//! be scored against analytical ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError};
use crate::gp::{gram_matrix, KernelFamily, KernelSpec};
use crate::linalg::cholesky_with_jitter;
use crate::predict::{ConfidenceLevel, PredictionInterval};
use crate::rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("x = {x} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("covariance matrix is not positive-definite after jitter up to {max_jitter:e}")]
    CholeskyFailure { max_jitter: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// How the noise profile enters the generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Covariance `D K D` with `D = diag(sigma(x))`: realizations stay
    /// smooth and the pointwise standard deviation is exactly `sigma(x)`.
    ScaledKernel,
    /// Independent heteroscedastic noise `y = mu(x) + sigma(x) eps`; same
    /// pointwise standard deviation, rough realizations.
    Independent,
}

/// Generator for the analytical heteroscedastic-GP benchmark.
///
/// Defaults: domain [0, 10], mean `x + 0.02 x^2 + 5 sin x`, Matérn 5/2 with
/// length 0.2 and unit variance, noise std rising linearly from 0.1 at x=0 to
/// 1.0 at x=5 and back to 0.1 at x=10, 100 grid points, 10 realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticalGpSpec {
    pub domain: (f64, f64),
    /// Coefficients (a, b, c) of the mean `a x + b x^2 + c sin x`.
    pub mean_coeffs: (f64, f64, f64),
    pub kernel: KernelSpec,
    /// Piecewise-linear noise-std knots `(x, sigma)`, x strictly increasing.
    pub noise_knots: Vec<(f64, f64)>,
    pub n_points: usize,
    pub n_realizations: usize,
    pub noise_mode: NoiseMode,
}

impl Default for AnalyticalGpSpec {
    fn default() -> Self {
        Self {
            domain: (0.0, 10.0),
            mean_coeffs: (1.0, 0.02, 5.0),
            kernel: KernelSpec {
                family: KernelFamily::Matern52,
                length_scale: 0.2,
                variance: 1.0,
            },
            noise_knots: vec![(0.0, 0.1), (5.0, 1.0), (10.0, 0.1)],
            n_points: 100,
            n_realizations: 10,
            noise_mode: NoiseMode::ScaledKernel,
        }
    }
}

impl AnalyticalGpSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.domain.0 < self.domain.1) {
            return Err(DatagenError::InvalidSpec(format!(
                "domain must satisfy lo < hi, got [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        if self.noise_knots.is_empty() {
            return Err(DatagenError::InvalidSpec("no noise knots".into()));
        }
        if self.noise_knots.iter().any(|(_, s)| *s <= 0.0) {
            return Err(DatagenError::InvalidSpec(
                "noise-std knots must be positive".into(),
            ));
        }
        if self.noise_knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(DatagenError::InvalidSpec(
                "knot x-values must be strictly increasing".into(),
            ));
        }
        if self.n_points < 2 || self.n_realizations == 0 {
            return Err(DatagenError::InvalidSpec(
                "need at least 2 grid points and 1 realization".into(),
            ));
        }
        self.kernel
            .validate()
            .map_err(|e| DatagenError::InvalidSpec(e.to_string()))?;
        Ok(())
    }

    /// The equidistant sampling grid over the domain (endpoints included).
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.domain;
        let n = self.n_points;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Trend `a x + b x^2 + c sin x`.
pub fn mean_function(spec: &AnalyticalGpSpec, x: f64) -> f64 {
    let (a, b, c) = spec.mean_coeffs;
    a * x + b * x * x + c * x.sin()
}

/// Noise standard deviation at `x`: piecewise-linear interpolation through
/// the spec's knots. Errors outside the knot range.
pub fn noise_std(spec: &AnalyticalGpSpec, x: f64) -> Result<f64, DatagenError> {
    let knots = &spec.noise_knots;
    let (lo, hi) = (knots[0].0, knots[knots.len() - 1].0);
    if x < lo || x > hi {
        return Err(DatagenError::OutOfDomain { x, lo, hi });
    }
    for w in knots.windows(2) {
        let ((x0, s0), (x1, s1)) = (w[0], w[1]);
        if x <= x1 {
            let t = (x - x0) / (x1 - x0);
            return Ok(s0 + t * (s1 - s0));
        }
    }
    Ok(knots[knots.len() - 1].1)
}

/// The analytical interval `mu(x) ± z_{1-alpha/2} sigma(x)`.
pub fn true_interval(
    spec: &AnalyticalGpSpec,
    x: f64,
    level: ConfidenceLevel,
) -> Result<PredictionInterval, DatagenError> {
    let sigma = noise_std(spec, x)?;
    let mu = mean_function(spec, x);
    Ok(PredictionInterval::symmetric(mu, level.z_value() * sigma))
}

/// Draw `n_realizations` joint samples of the generator on its grid and
/// concatenate them into one dataset (all points labeled train).
///
/// In `ScaledKernel` mode each realization is a multivariate-normal draw
/// with mean `mu(grid)` and covariance `D K D`.
pub fn sample_realizations(
    spec: &AnalyticalGpSpec,
    rng: &mut RngStream,
) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    let grid = spec.grid();
    let n = grid.len();
    let mu: Vec<f64> = grid.iter().map(|&x| mean_function(spec, x)).collect();
    let sigma: Result<Vec<f64>, _> = grid.iter().map(|&x| noise_std(spec, x)).collect();
    let sigma = sigma?;

    let mut inputs = Vec::with_capacity(n * spec.n_realizations);
    let mut targets = Vec::with_capacity(n * spec.n_realizations);

    match spec.noise_mode {
        NoiseMode::ScaledKernel => {
            let xs: Vec<Vec<f64>> = grid.iter().map(|&x| vec![x]).collect();
            let k = gram_matrix(&spec.kernel, &xs);
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    cov[(i, j)] = sigma[i] * k[(i, j)] * sigma[j];
                }
            }
            let (l, _) = cholesky_with_jitter(&cov).map_err(|e| DatagenError::CholeskyFailure {
                max_jitter: e.max_jitter,
            })?;
            for _ in 0..spec.n_realizations {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.standard_normal()));
                let sample = &l * z;
                for (i, &x) in grid.iter().enumerate() {
                    inputs.push(vec![x]);
                    targets.push(mu[i] + sample[i]);
                }
            }
        }
        NoiseMode::Independent => {
            for _ in 0..spec.n_realizations {
                for (i, &x) in grid.iter().enumerate() {
                    inputs.push(vec![x]);
                    targets.push(mu[i] + sigma[i] * rng.standard_normal());
                }
            }
        }
    }

    Ok(Dataset::all_train(inputs, targets)?)
}

/// A synthetic stand-in for axial flux-profile measurements: a damped cosine
/// plus baseline with multiplicative Gaussian noise. Entirely synthetic; the
/// parameters below define the truth, so intervals can be scored exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluxSurrogateSpec {
    /// Axial positions, in millimetres.
    pub domain: (f64, f64),
    pub baseline: f64,
    pub amplitude: f64,
    /// Exponential damping rate per mm.
    pub damping: f64,
    /// Angular frequency, radians per mm.
    pub frequency: f64,
    pub phase: f64,
    /// Relative noise std: y = mu(x) (1 + rel_noise_std * eps).
    pub rel_noise_std: f64,
    pub n_points: usize,
    pub n_realizations: usize,
}

impl Default for FluxSurrogateSpec {
    fn default() -> Self {
        Self {
            domain: (0.0, 600.0),
            baseline: 10.0,
            amplitude: 4.0,
            damping: 1.5e-3,
            frequency: 9.0e-3,
            phase: 0.6,
            rel_noise_std: 0.07,
            n_points: 120,
            n_realizations: 5,
        }
    }
}

impl FluxSurrogateSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.domain.0 < self.domain.1) || self.n_points < 2 || self.n_realizations == 0 {
            return Err(DatagenError::InvalidSpec("bad flux-surrogate spec".into()));
        }
        if self.rel_noise_std <= 0.0 {
            return Err(DatagenError::InvalidSpec(
                "rel_noise_std must be positive".into(),
            ));
        }
        let min = self.baseline - self.amplitude;
        if min <= 0.0 {
            return Err(DatagenError::InvalidSpec(
                "baseline must exceed amplitude so counts stay positive".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.domain;
        (0..self.n_points)
            .map(|i| lo + (hi - lo) * i as f64 / (self.n_points - 1) as f64)
            .collect()
    }

    /// Noise-free profile value at `x`.
    pub fn mean(&self, x: f64) -> f64 {
        self.baseline
            + self.amplitude
                * (-self.damping * x).exp()
                * (self.frequency * x + self.phase).cos()
    }

    /// True noise std at `x` (multiplicative noise model).
    pub fn noise_std(&self, x: f64) -> f64 {
        self.mean(x).abs() * self.rel_noise_std
    }

    pub fn true_interval(&self, x: f64, level: ConfidenceLevel) -> PredictionInterval {
        PredictionInterval::symmetric(self.mean(x), level.z_value() * self.noise_std(x))
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<Dataset, DatagenError> {
        self.validate()?;
        let grid = self.grid();
        let mut inputs = Vec::with_capacity(grid.len() * self.n_realizations);
        let mut targets = Vec::with_capacity(grid.len() * self.n_realizations);
        for _ in 0..self.n_realizations {
            for &x in &grid {
                inputs.push(vec![x]);
                targets.push(self.mean(x) * (1.0 + self.rel_noise_std * rng.standard_normal()));
            }
        }
        Ok(Dataset::all_train(inputs, targets)?)
    }
}
