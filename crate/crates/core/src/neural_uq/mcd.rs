//! Monte Carlo Dropout: dropout stays active at prediction time, and the
//! spread of repeated stochastic passes is pooled with the aleatoric head.

use serde::{Deserialize, Serialize};

use super::UqError;
use crate::dataset::Dataset;
use crate::neural::{train, MlpModel, MlpSpec, TrainConfig};
use crate::predict::{
    gaussian_interval, ConfidenceLevel, GaussianPrediction, PredictError, PredictionInterval,
    Predictor,
};
use crate::rng::RngStream;

/// Mean and the two pooled variance components of a Monte Carlo predictor:
/// the average aleatoric head variance and the spread of the sampled means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDecomposition {
    pub mean: f64,
    pub aleatoric_var: f64,
    pub epistemic_var: f64,
}

impl UncertaintyDecomposition {
    pub fn total_var(&self) -> f64 {
        self.aleatoric_var + self.epistemic_var
    }

    pub fn total_std(&self) -> f64 {
        self.total_var().sqrt()
    }

    pub fn to_gaussian(&self) -> GaussianPrediction {
        GaussianPrediction {
            mean: self.mean,
            std: self.total_std().max(f64::MIN_POSITIVE),
        }
    }
}

/// Pool per-pass Gaussian predictions: predictive mean is the average of the
/// sampled means; predictive variance is `mean(sigma_t^2) + var(mu_t)` with
/// the population variance, matching the uniform-mixture moments.
pub(crate) fn pool_moments(preds: &[GaussianPrediction]) -> UncertaintyDecomposition {
    let t = preds.len() as f64;
    let mean = preds.iter().map(|p| p.mean).sum::<f64>() / t;
    let aleatoric_var = preds.iter().map(|p| p.std * p.std).sum::<f64>() / t;
    let epistemic_var = preds
        .iter()
        .map(|p| (p.mean - mean) * (p.mean - mean))
        .sum::<f64>()
        / t;
    UncertaintyDecomposition {
        mean,
        aleatoric_var,
        epistemic_var,
    }
}

/// A dropout-trained network evaluated `passes` times per query.
#[derive(Debug, Clone)]
pub struct McdPredictor {
    model: MlpModel,
    passes: usize,
}

impl McdPredictor {
    /// Wrap a fitted model. The model must have a dropout rate in (0, 1)
    /// (otherwise the passes collapse) and `passes >= 2`.
    pub fn new(model: MlpModel, passes: usize) -> Result<Self, UqError> {
        let p = model.spec().dropout;
        if !(0.0 < p && p < 1.0) {
            return Err(UqError::NoDropout(p));
        }
        if passes < 2 {
            return Err(UqError::TooFewSamples {
                what: "dropout passes",
                n: passes,
            });
        }
        Ok(Self { model, passes })
    }

    /// Train the network and wrap it in one step.
    pub fn fit(
        spec: &MlpSpec,
        config: &TrainConfig,
        data: &Dataset,
        passes: usize,
        rng: &mut RngStream,
    ) -> Result<Self, UqError> {
        let model = train(spec, config, data, rng)?;
        Self::new(model, passes)
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn predict_decomposed(
        &self,
        x: &[f64],
        rng: &mut RngStream,
    ) -> Result<UncertaintyDecomposition, PredictError> {
        let preds = self.model.predict_dropout_batch(x, self.passes, rng)?;
        Ok(pool_moments(&preds))
    }

    pub fn predict_gaussian(
        &self,
        x: &[f64],
        rng: &mut RngStream,
    ) -> Result<GaussianPrediction, PredictError> {
        Ok(self.predict_decomposed(x, rng)?.to_gaussian())
    }
}

impl Predictor for McdPredictor {
    fn dim(&self) -> usize {
        self.model.spec().input_dim()
    }

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError> {
        Ok(gaussian_interval(self.predict_gaussian(x, rng)?, level))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    fn dropped_model(p: f64, seed: u64) -> MlpModel {
        MlpModel::init(&MlpSpec::new(1, &[12, 12], Activation::Tanh, p, seed).unwrap()).unwrap()
    }

    #[test]
    fn requires_dropout_and_two_passes() {
        assert!(matches!(
            McdPredictor::new(dropped_model(0.0, 1), 10),
            Err(UqError::NoDropout(_))
        ));
        assert!(matches!(
            McdPredictor::new(dropped_model(0.2, 1), 1),
            Err(UqError::TooFewSamples { .. })
        ));
        assert!(McdPredictor::new(dropped_model(0.2, 1), 2).is_ok());
    }

    #[test]
    fn same_stream_gives_identical_output() {
        let mcd = McdPredictor::new(dropped_model(0.3, 5), 50).unwrap();
        let a = mcd
            .predict_gaussian(&[0.4], &mut RngStream::with_stream(9, 2))
            .unwrap();
        let b = mcd
            .predict_gaussian(&[0.4], &mut RngStream::with_stream(9, 2))
            .unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std.to_bits(), b.std.to_bits());
    }

    #[test]
    fn tiny_dropout_variance_is_dominated_by_aleatoric_head() {
        // As p -> 0 the mean spread vanishes and the pooled variance reduces
        // to the averaged head variance.
        let mcd = McdPredictor::new(dropped_model(1e-9, 3), 200).unwrap();
        let d = mcd
            .predict_decomposed(&[0.7], &mut RngStream::new(4))
            .unwrap();
        assert!(d.epistemic_var <= 1e-12);
        assert!(d.aleatoric_var > 0.0);
    }

    #[test]
    fn monte_carlo_mean_converges() {
        let mcd_small = McdPredictor::new(dropped_model(0.4, 8), 10_000).unwrap();
        let mcd_big = McdPredictor::new(dropped_model(0.4, 8), 100_000).unwrap();
        let x = [0.25];
        let small = mcd_small
            .predict_decomposed(&x, &mut RngStream::with_stream(1, 1))
            .unwrap();
        let big = mcd_big
            .predict_decomposed(&x, &mut RngStream::with_stream(1, 2))
            .unwrap();
        // Standard error of the pooled means, added in quadrature.
        let se = (small.epistemic_var / 10_000.0 + big.epistemic_var / 100_000.0).sqrt();
        assert!(
            (small.mean - big.mean).abs() <= 3.0 * se,
            "{} vs {} (se {se})",
            small.mean,
            big.mean
        );
    }

    #[test]
    fn pooled_components_are_nonnegative() {
        let mcd = McdPredictor::new(dropped_model(0.5, 2), 64).unwrap();
        let d = mcd
            .predict_decomposed(&[-1.2], &mut RngStream::new(0))
            .unwrap();
        assert!(d.aleatoric_var >= 0.0);
        assert!(d.epistemic_var >= 0.0);
        assert!(d.total_var() >= d.aleatoric_var);
        assert!(d.total_var() >= d.epistemic_var);
    }
}
