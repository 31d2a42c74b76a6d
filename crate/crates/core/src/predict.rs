//! Predictive distributions, intervals, and the common predictor interface.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("model expects {expected}-dimensional inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model is not fitted: {0}")]
    Unfitted(String),
    #[error("invalid prediction: {0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
#[error("alpha must lie strictly between 0 and 1, got {0}")]
pub struct InvalidAlpha(pub f64);

/// Confidence level `1 - alpha`, with `alpha` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceLevel {
    alpha: f64,
}

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self, InvalidAlpha> {
        if alpha.is_finite() && 0.0 < alpha && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(InvalidAlpha(alpha))
        }
    }

    /// The conventional 95% level (alpha = 0.05).
    pub fn ninety_five() -> Self {
        Self { alpha: 0.05 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Two-sided standard-normal quantile `z` with `P(|Z| <= z) = 1 - alpha`.
    pub fn z_value(&self) -> f64 {
        standard_normal_quantile(1.0 - self.alpha / 2.0)
    }
}

impl TryFrom<f64> for ConfidenceLevel {
    type Error = InvalidAlpha;

    fn try_from(alpha: f64) -> Result<Self, Self::Error> {
        ConfidenceLevel::new(alpha)
    }
}

impl From<ConfidenceLevel> for f64 {
    fn from(level: ConfidenceLevel) -> f64 {
        level.alpha
    }
}

/// Quantile function of the standard normal distribution.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// A Gaussian predictive distribution at a single input: mean and standard
/// deviation, the two-output convention shared by every method here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub std: f64,
}

impl GaussianPrediction {
    pub fn new(mean: f64, std: f64) -> Result<Self, PredictError> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(PredictError::Invalid(format!(
                "mean {mean}, std {std} (std must be finite and positive)"
            )));
        }
        Ok(Self { mean, std })
    }
}

/// A prediction interval `[lower, upper]` around `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub center: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, center: f64, upper: f64) -> Result<Self, PredictError> {
        if !(lower <= center && center <= upper) {
            return Err(PredictError::Invalid(format!(
                "interval ordering violated: {lower} <= {center} <= {upper}"
            )));
        }
        Ok(Self {
            lower,
            center,
            upper,
        })
    }

    /// Interval `center ± half_width` (`half_width >= 0`).
    pub fn symmetric(center: f64, half_width: f64) -> Self {
        debug_assert!(half_width >= 0.0);
        Self {
            lower: center - half_width,
            center,
            upper: center + half_width,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }

    /// Closed-interval membership; boundary values count as covered.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Central Gaussian interval `mean ± z_{1-alpha/2} * std`.
pub fn gaussian_interval(pred: GaussianPrediction, level: ConfidenceLevel) -> PredictionInterval {
    PredictionInterval::symmetric(pred.mean, level.z_value() * pred.std)
}

/// A fitted model that yields a point prediction `f(x)`.
pub trait PointPredictor: Send + Sync {
    fn dim(&self) -> usize;
    fn point(&self, x: &[f64]) -> Result<f64, PredictError>;
}

/// A fitted model that yields a prediction interval at a confidence level.
///
/// Deterministic methods ignore the stream; Monte Carlo methods (dropout,
/// posterior sampling) consume it, so callers control reproducibility.
pub trait Predictor: Send + Sync {
    fn dim(&self) -> usize;

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError>;
}

/// A fixed-output point model; useful as a deliberately wrong baseline when
/// exercising guarantees that must hold for any model.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel {
    pub value: f64,
    pub dim: usize,
}

impl PointPredictor for ConstantModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
        check_dim(self.dim, x)?;
        Ok(self.value)
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), PredictError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(PredictError::DimensionMismatch {
            expected,
            got: x.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_must_be_in_open_interval() {
        assert!(ConfidenceLevel::new(0.0).is_err());
        assert!(ConfidenceLevel::new(1.0).is_err());
        assert!(ConfidenceLevel::new(f64::NAN).is_err());
        assert!(ConfidenceLevel::new(0.05).is_ok());
    }

    #[test]
    fn z_value_for_ninety_five_percent() {
        let z = ConfidenceLevel::ninety_five().z_value();
        assert!((z - 1.959964).abs() < 1e-5, "z = {z}");
    }

    #[test]
    fn gaussian_interval_standard_cases() {
        let level = ConfidenceLevel::ninety_five();
        let iv = gaussian_interval(GaussianPrediction { mean: 0.0, std: 1.0 }, level);
        assert!((iv.lower + 1.95996).abs() < 1e-4);
        assert!((iv.upper - 1.95996).abs() < 1e-4);

        // alpha = 0.3174 is the two-sided one-sigma level.
        let one_sigma = ConfidenceLevel::new(0.3174).unwrap();
        let iv = gaussian_interval(GaussianPrediction { mean: 2.0, std: 3.0 }, one_sigma);
        assert!((iv.half_width() - 3.0).abs() < 3.0 * 1e-3);
    }

    #[test]
    fn gaussian_interval_scales_linearly_in_std() {
        let level = ConfidenceLevel::new(0.1).unwrap();
        let base = gaussian_interval(GaussianPrediction { mean: 1.0, std: 0.5 }, level);
        let scaled = gaussian_interval(GaussianPrediction { mean: 1.0, std: 1.5 }, level);
        assert!((scaled.half_width() - 3.0 * base.half_width()).abs() < 1e-12);
    }

    #[test]
    fn interval_collapses_as_alpha_approaches_one() {
        let level = ConfidenceLevel::new(0.9999).unwrap();
        let iv = gaussian_interval(GaussianPrediction { mean: 5.0, std: 2.0 }, level);
        assert!(iv.half_width() < 1e-3);
        assert!(iv.contains(5.0));
    }

    #[test]
    fn closed_interval_contains_boundary() {
        let iv = PredictionInterval::symmetric(1.0, 0.0);
        assert!(iv.contains(1.0));
        assert!(!iv.contains(1.0 + 1e-12));
    }

    #[test]
    fn interval_ordering_enforced() {
        assert!(PredictionInterval::new(0.0, 1.0, 2.0).is_ok());
        assert!(PredictionInterval::new(2.0, 1.0, 0.0).is_err());
    }
}
