//! Exact Gaussian-process regression with Matérn 5/2 and squared-exponential
//! kernels: Cholesky-based fitting, predictive mean/variance, and marginal
//! likelihood for hyperparameter selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Role};
use crate::linalg::cholesky_with_jitter;
use crate::predict::{
    check_dim, gaussian_interval, ConfidenceLevel, GaussianPrediction, PointPredictor,
    PredictError, PredictionInterval, Predictor,
};
use crate::rng::RngStream;

/// Predictive variances are floored here before the square root.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GpError {
    #[error("kernel requires length_scale > 0 and variance > 0, got l={0}, s2={1}")]
    InvalidKernel(f64, f64),
    #[error("noise variance must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("no training points available")]
    NoTrainingPoints,
    #[error("covariance matrix is not positive-definite after jitter up to {max_jitter:e}")]
    CholeskyFailure { max_jitter: f64 },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("every hyperparameter grid point failed to fit")]
    AllGridPointsFailed,
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Stationary covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Matern52,
    SquaredExponential,
}

/// Kernel parameters: family, length scale and output variance `s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub length_scale: f64,
    pub variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, length_scale: f64, variance: f64) -> Result<Self, GpError> {
        let spec = Self {
            family,
            length_scale,
            variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite())
            || !(self.variance > 0.0 && self.variance.is_finite())
        {
            return Err(GpError::InvalidKernel(self.length_scale, self.variance));
        }
        Ok(())
    }
}

/// Evaluate the kernel at a pair of points. Panics if dimensions differ.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "kernel inputs must share a dimension");
    let r2: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    kernel_eval_r(spec, r2.sqrt())
}

fn kernel_eval_r(spec: &KernelSpec, r: f64) -> f64 {
    let l = spec.length_scale;
    match spec.family {
        KernelFamily::Matern52 => {
            let u = 5.0_f64.sqrt() * r / l;
            spec.variance * (1.0 + u + u * u / 3.0) * (-u).exp()
        }
        KernelFamily::SquaredExponential => spec.variance * (-r * r / (2.0 * l * l)).exp(),
    }
}

/// Kernel Gram matrix; exactly symmetric by construction.
pub fn gram_matrix(spec: &KernelSpec, xs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.variance;
        for j in (i + 1)..n {
            let v = kernel_eval(spec, &xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// A fitted GP: kernel, noise variance, training data, the lower Cholesky
/// factor of `K + noise*I + jitter`, and the precomputed weight vector.
///
/// The prior mean is fixed at the training-target mean; targets are centered
/// internally and the mean is added back at prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_var: f64,
    x_train: Vec<Vec<f64>>,
    y_mean: f64,
    y_centered: DVector<f64>,
    chol_lower: DMatrix<f64>,
    weights: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Fit on the train-role points of `data`.
    pub fn fit(kernel: KernelSpec, noise_var: f64, data: &Dataset) -> Result<Self, GpError> {
        let (xs, ys) = data.role_points(Role::Train);
        Self::fit_points(kernel, noise_var, xs, ys)
    }

    /// Fit on explicit points.
    pub fn fit_points(
        kernel: KernelSpec,
        noise_var: f64,
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        if !noise_var.is_finite() || noise_var < 0.0 {
            return Err(GpError::InvalidNoise(noise_var));
        }
        if xs.is_empty() {
            return Err(GpError::NoTrainingPoints);
        }
        let n = xs.len();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let y_centered = DVector::from_iterator(n, ys.iter().map(|y| y - y_mean));

        let mut k = gram_matrix(&kernel, &xs);
        for i in 0..n {
            k[(i, i)] += noise_var;
        }
        let (chol_lower, jitter) =
            cholesky_with_jitter(&k).map_err(|e| GpError::CholeskyFailure {
                max_jitter: e.max_jitter,
            })?;
        let weights = solve_cholesky(&chol_lower, &y_centered);

        Ok(Self {
            kernel,
            noise_var,
            x_train: xs,
            y_mean,
            y_centered,
            chol_lower,
            weights,
            jitter,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn train_len(&self) -> usize {
        self.x_train.len()
    }

    /// Jitter added to the diagonal before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Predictive mean and standard deviation at `x`.
    ///
    /// Mean is `y_mean + k*' (K + noise I)^-1 (y - y_mean)`; variance is
    /// `k(x,x) + noise - k*' (K + noise I)^-1 k*`, floored at 1e-12.
    pub fn predict(&self, x: &[f64]) -> Result<GaussianPrediction, PredictError> {
        check_dim(self.dim(), x)?;
        let n = self.x_train.len();
        let k_star = DVector::from_iterator(
            n,
            self.x_train.iter().map(|xi| kernel_eval(&self.kernel, xi, x)),
        );
        let mean = self.y_mean + k_star.dot(&self.weights);
        let v = self
            .chol_lower
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has positive diagonal");
        let var = self.kernel.variance + self.noise_var - v.dot(&v);
        let std = var.max(VARIANCE_FLOOR).sqrt();
        Ok(GaussianPrediction { mean, std })
    }

    /// Log marginal likelihood of the (centered) training targets:
    /// `-1/2 y' a - sum(log L_ii) - n/2 log(2 pi)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x_train.len() as f64;
        let quad = self.y_centered.dot(&self.weights);
        let log_det_half: f64 = (0..self.x_train.len())
            .map(|i| self.chol_lower[(i, i)].ln())
            .sum();
        -0.5 * quad - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

impl PointPredictor for GpModel {
    fn dim(&self) -> usize {
        self.x_train[0].len()
    }

    fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
        Ok(self.predict(x)?.mean)
    }
}

impl Predictor for GpModel {
    fn dim(&self) -> usize {
        self.x_train[0].len()
    }

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        _rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError> {
        Ok(gaussian_interval(self.predict(x)?, level))
    }
}

impl GpModel {
    fn dim(&self) -> usize {
        self.x_train[0].len()
    }
}

/// One hyperparameter candidate: kernel plus observation-noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub kernel: KernelSpec,
    pub noise_var: f64,
}

/// Fit every grid point on the train role and return the model maximizing
/// log marginal likelihood. Ties break toward the smallest length scale,
/// then the smallest noise. Grid points that fail to factor are skipped.
pub fn select_hyperparameters(data: &Dataset, grid: &[GpHyper]) -> Result<GpModel, GpError> {
    let (xs, ys) = data.role_points(Role::Train);
    select_hyperparameters_points(&xs, &ys, grid)
}

/// As [`select_hyperparameters`], on explicit points.
pub fn select_hyperparameters_points(
    xs: &[Vec<f64>],
    ys: &[f64],
    grid: &[GpHyper],
) -> Result<GpModel, GpError> {
    if grid.is_empty() {
        return Err(GpError::EmptyGrid);
    }
    let mut best: Option<(f64, GpModel)> = None;
    for hyper in grid {
        let model = match GpModel::fit_points(hyper.kernel, hyper.noise_var, xs.to_vec(), ys.to_vec())
        {
            Ok(m) => m,
            Err(_) => continue,
        };
        let lml = model.log_marginal_likelihood();
        if !lml.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((best_lml, best_model)) => {
                lml > *best_lml
                    || (lml == *best_lml
                        && (hyper.kernel.length_scale, hyper.noise_var)
                            < (best_model.kernel.length_scale, best_model.noise_var))
            }
        };
        if better {
            best = Some((lml, model));
        }
    }
    best.map(|(_, m)| m).ok_or(GpError::AllGridPointsFailed)
}

/// Log-spaced grid helper for hyperparameter search.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn solve_cholesky(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has positive diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("cholesky factor has positive diagonal")
}
