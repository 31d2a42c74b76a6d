//! Deep ensembles: independently initialized and trained networks whose
//! per-input Gaussian predictions are pooled as a uniform mixture.

use rand::RngCore;
use rayon::prelude::*;

use super::mcd::UncertaintyDecomposition;
use super::UqError;
use crate::dataset::Dataset;
use crate::neural::{train, MlpModel, MlpSpec, TrainConfig};
use crate::predict::{
    gaussian_interval, ConfidenceLevel, GaussianPrediction, PredictError, PredictionInterval,
    Predictor,
};
use crate::rng::RngStream;

/// An ensemble of fitted networks with identical architecture.
#[derive(Debug, Clone)]
pub struct EnsemblePredictor {
    members: Vec<MlpModel>,
}

impl EnsemblePredictor {
    pub fn from_members(members: Vec<MlpModel>) -> Result<Self, UqError> {
        if members.len() < 2 {
            return Err(UqError::TooFewSamples {
                what: "ensemble members",
                n: members.len(),
            });
        }
        let shape = &members[0].spec().layer_widths;
        if members
            .iter()
            .any(|m| &m.spec().layer_widths != shape)
        {
            return Err(UqError::MixedArchitectures);
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Uniform mixture moments over the members' Gaussian predictions:
    /// `mu* = mean(mu_m)`, `var* = mean(sigma_m^2 + mu_m^2) - mu*^2`.
    pub fn predict_decomposed(&self, x: &[f64]) -> Result<UncertaintyDecomposition, PredictError> {
        let m = self.members.len() as f64;
        let preds: Result<Vec<GaussianPrediction>, _> =
            self.members.iter().map(|member| member.predict(x)).collect();
        let preds = preds?;
        let mean = preds.iter().map(|p| p.mean).sum::<f64>() / m;
        let aleatoric_var = preds.iter().map(|p| p.std * p.std).sum::<f64>() / m;
        let epistemic_var = preds.iter().map(|p| p.mean * p.mean).sum::<f64>() / m - mean * mean;
        Ok(UncertaintyDecomposition {
            mean,
            aleatoric_var,
            // Guard the subtraction against cancellation for identical members.
            epistemic_var: epistemic_var.max(0.0),
        })
    }

    pub fn predict_gaussian(&self, x: &[f64]) -> Result<GaussianPrediction, PredictError> {
        Ok(self.predict_decomposed(x)?.to_gaussian())
    }
}

impl Predictor for EnsemblePredictor {
    fn dim(&self) -> usize {
        self.members[0].spec().input_dim()
    }

    fn predict_interval(
        &self,
        x: &[f64],
        level: ConfidenceLevel,
        _rng: &mut RngStream,
    ) -> Result<PredictionInterval, PredictError> {
        Ok(gaussian_interval(self.predict_gaussian(x)?, level))
    }
}

/// Train `m` members with distinct derived streams (distinct initialization
/// and batch shuffling). Members train in parallel; results are collected in
/// member order, so the outcome does not depend on scheduling.
pub fn fit_ensemble(
    spec: &MlpSpec,
    config: &TrainConfig,
    data: &Dataset,
    m: usize,
    rng: &mut RngStream,
) -> Result<EnsemblePredictor, UqError> {
    if m < 2 {
        return Err(UqError::TooFewSamples {
            what: "ensemble members",
            n: m,
        });
    }
    let streams: Vec<RngStream> = (0..m).map(|i| rng.substream(i as u64)).collect();
    let members: Vec<Result<MlpModel, UqError>> = streams
        .into_par_iter()
        .enumerate()
        .map(|(index, mut member_rng)| {
            let mut member_spec = spec.clone();
            member_spec.seed = member_rng.next_u64();
            train(&member_spec, config, data, &mut member_rng)
                .map_err(|source| UqError::MemberTraining { index, source })
        })
        .collect();
    let members: Result<Vec<MlpModel>, UqError> = members.into_iter().collect();
    EnsemblePredictor::from_members(members?)
}
