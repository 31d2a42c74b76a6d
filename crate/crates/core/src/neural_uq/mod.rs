//! Neural uncertainty-quantification predictors: Monte Carlo Dropout, deep
//! ensembles, and a mean-field variational Bayesian network, all exposing
//! Gaussian predictions and quantile-based intervals.

mod bnn;
mod ensemble;
mod mcd;

use serde::{Deserialize, Serialize};

pub use crate::predict::gaussian_interval;
pub use bnn::{gaussian_kl, BnnConfig, BnnPredictor};
pub use ensemble::{fit_ensemble, EnsemblePredictor};
pub use mcd::{McdPredictor, UncertaintyDecomposition};

use crate::neural::{MlpModel, NeuralError, TrainError};
use crate::predict::PredictError;

#[derive(Debug, thiserror::Error)]
pub enum UqError {
    #[error("monte carlo dropout requires a dropout rate in (0, 1), got {0}")]
    NoDropout(f64),
    #[error("BNN spec must have dropout 0, got {0}")]
    BnnDropout(f64),
    #[error("need at least 2 {what}, got {n}")]
    TooFewSamples { what: &'static str, n: usize },
    #[error("ensemble members must share one architecture")]
    MixedArchitectures,
    #[error("ensemble member {index} failed to train: {source}")]
    MemberTraining { index: usize, source: TrainError },
    #[error("envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Serialization envelope around the neural model documents: the method tag,
/// its sample count (dropout passes / members / posterior samples), and the
/// seeds of the wrapped models.
#[derive(Debug, Serialize, Deserialize)]
pub struct MethodEnvelope {
    pub method: String,
    pub n_samples: usize,
    pub seeds: Vec<u64>,
    pub models: Vec<serde_json::Value>,
}

impl MethodEnvelope {
    pub fn for_mcd(p: &McdPredictor) -> Self {
        Self {
            method: "mcd".into(),
            n_samples: p.passes(),
            seeds: vec![p.model().spec().seed],
            models: vec![model_value(p.model())],
        }
    }

    pub fn for_ensemble(p: &EnsemblePredictor) -> Self {
        Self {
            method: "de".into(),
            n_samples: p.size(),
            seeds: p.members().iter().map(|m| m.spec().seed).collect(),
            models: p.members().iter().map(model_value).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, UqError> {
        serde_json::from_str(text).map_err(|e| UqError::Envelope(e.to_string()))
    }

    pub fn into_mcd(self) -> Result<McdPredictor, UqError> {
        if self.method != "mcd" || self.models.len() != 1 {
            return Err(UqError::Envelope(format!(
                "expected an mcd envelope with one model, got {} with {}",
                self.method,
                self.models.len()
            )));
        }
        let model = model_from_value(&self.models[0])?;
        McdPredictor::new(model, self.n_samples)
    }

    pub fn into_ensemble(self) -> Result<EnsemblePredictor, UqError> {
        if self.method != "de" {
            return Err(UqError::Envelope(format!(
                "expected a de envelope, got {}",
                self.method
            )));
        }
        let members: Result<Vec<MlpModel>, UqError> =
            self.models.iter().map(model_from_value).collect();
        EnsemblePredictor::from_members(members?)
    }
}

fn model_value(model: &MlpModel) -> serde_json::Value {
    serde_json::from_str(&model.to_json()).expect("model document is valid json")
}

fn model_from_value(value: &serde_json::Value) -> Result<MlpModel, UqError> {
    Ok(MlpModel::from_json(&value.to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, MlpSpec};
    use crate::rng::RngStream;

    #[test]
    fn mcd_envelope_round_trip() {
        let spec = MlpSpec::new(1, &[6], Activation::Relu, 0.25, 42).unwrap();
        let model = MlpModel::init(&spec).unwrap();
        let mcd = McdPredictor::new(model, 32).unwrap();
        let envelope = MethodEnvelope::for_mcd(&mcd);
        let back = MethodEnvelope::from_json(&envelope.to_json())
            .unwrap()
            .into_mcd()
            .unwrap();
        assert_eq!(back.passes(), 32);
        let mut rng_a = RngStream::new(7);
        let mut rng_b = RngStream::new(7);
        let a = mcd.predict_gaussian(&[0.5], &mut rng_a).unwrap();
        let b = back.predict_gaussian(&[0.5], &mut rng_b).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    }

    #[test]
    fn ensemble_envelope_round_trip() {
        let members: Vec<MlpModel> = (0..3)
            .map(|seed| {
                MlpModel::init(&MlpSpec::new(1, &[5], Activation::Tanh, 0.0, seed).unwrap())
                    .unwrap()
            })
            .collect();
        let ensemble = EnsemblePredictor::from_members(members).unwrap();
        let envelope = MethodEnvelope::for_ensemble(&ensemble);
        assert_eq!(envelope.seeds, vec![0, 1, 2]);
        let back = MethodEnvelope::from_json(&envelope.to_json())
            .unwrap()
            .into_ensemble()
            .unwrap();
        let a = ensemble.predict_gaussian(&[0.1]).unwrap();
        let b = back.predict_gaussian(&[0.1]).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std.to_bits(), b.std.to_bits());
    }
}
