//! Mean-field variational Bayesian neural network trained by the
//! reparameterization trick: each parameter carries a Gaussian posterior
//! `N(mu_w, softplus(rho_w)^2)`, and one weight sample per step drives the
//! Gaussian-NLL data term while the KL to the prior is closed-form.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mcd::{pool_moments, UncertaintyDecomposition};
use super::UqError;
use crate::dataset::{Dataset, Role};
use crate::neural::math::Mat;
use crate::neural::mlp::sigmoid;
use crate::neural::train::{backward, head_loss_and_grad, standardize_batch};
use crate::neural::{softplus, Loss, MlpModel, MlpSpec, Standardizer, TrainConfig, TrainError};
use crate::predict::{
    gaussian_interval, ConfidenceLevel, GaussianPrediction, PredictError, PredictionInterval,
    Predictor,
};
use crate::rng::RngStream;

const SIGMA_FLOOR: f64 = 1e-12;

/// Closed-form KL divergence between two univariate Gaussians,
/// `KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))`.
pub fn gaussian_kl(mu_q: f64, sigma_q: f64, mu_p: f64, sigma_p: f64) -> f64 {
    let d = mu_q - mu_p;
    (sigma_p / sigma_q).ln() + (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5
}

/// Variational-inference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnnConfig {
    /// Zero-mean Gaussian prior std on standardized scale.
    pub prior_std: f64,
    /// Posterior samples per prediction.
    pub samples: usize,
    /// Final KL weight after annealing.
    pub kl_weight: f64,
    /// Fraction of epochs over which the KL weight ramps from 0 to full.
    pub kl_anneal_frac: f64,
    /// Initial posterior std for every parameter.
    pub init_sigma: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            prior_std: 1.0,
            samples: 100,
            kl_weight: 1.0,
            kl_anneal_frac: 0.1,
            init_sigma: 0.05,
        }
    }
}

pub(crate) struct ElboStep {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// One reparameterized ELBO step on a standardized batch:
/// `loss = mean NLL + kl_weight * KL(q || prior) / n_train`.
pub(crate) fn elbo_step(
    net: &mut MlpModel,
    mu: &[f64],
    rho: &[f64],
    bx: &Mat,
    ys_std: &[f64],
    prior_std: f64,
    n_train: usize,
    kl_weight: f64,
    rng: &mut RngStream,
) -> ElboStep {
    let n_params = mu.len();
    let mut eps = vec![0.0; n_params];
    let mut sigma = vec![0.0; n_params];
    let mut w = vec![0.0; n_params];
    for i in 0..n_params {
        eps[i] = rng.standard_normal();
        sigma[i] = softplus(rho[i]).max(SIGMA_FLOOR);
        w[i] = mu[i] + sigma[i] * eps[i];
    }
    net.set_params_flat(&w);
    let cache = net.forward_batch(bx, None);
    let (nll, d_out) = head_loss_and_grad(cache.activations.last().unwrap(), ys_std, Loss::GaussianNll);
    let data_grads = backward(net, &cache, d_out).flat();

    let inv_n = 1.0 / n_train as f64;
    let prior_var = prior_std * prior_std;
    let mut kl = 0.0;
    let mut grad_mu = vec![0.0; n_params];
    let mut grad_rho = vec![0.0; n_params];
    for i in 0..n_params {
        kl += gaussian_kl(mu[i], sigma[i], 0.0, prior_std);
        let d_sigma_d_rho = sigmoid(rho[i]);
        let kl_mu = mu[i] / prior_var;
        let kl_sigma = -1.0 / sigma[i] + sigma[i] / prior_var;
        grad_mu[i] = data_grads[i] + kl_weight * inv_n * kl_mu;
        grad_rho[i] =
            (data_grads[i] * eps[i] + kl_weight * inv_n * kl_sigma) * d_sigma_d_rho;
    }

    ElboStep {
        loss: nll + kl_weight * kl * inv_n,
        nll,
        kl,
        grad_mu,
        grad_rho,
    }
}

/// A trained mean-field BNN.
#[derive(Debug, Clone)]
pub struct BnnPredictor {
    template: MlpModel,
    mu: Vec<f64>,
    rho: Vec<f64>,
    prior_std: f64,
    samples: usize,
    loss_history: Vec<f64>,
}

impl BnnPredictor {
    /// Fit by Adam over the variational parameters, one weight sample per
    /// mini-batch step, with the KL weight annealed linearly over the first
    /// `kl_anneal_frac` of epochs.
    pub fn fit(
        spec: &MlpSpec,
        config: &TrainConfig,
        bnn: &BnnConfig,
        data: &Dataset,
        rng: &mut RngStream,
    ) -> Result<Self, UqError> {
        config.validate().map_err(UqError::Train)?;
        if spec.dropout != 0.0 {
            return Err(UqError::BnnDropout(spec.dropout));
        }
        if bnn.samples < 2 {
            return Err(UqError::TooFewSamples {
                what: "posterior samples",
                n: bnn.samples,
            });
        }
        let (xs, ys) = data.role_points(Role::Train);
        if xs.is_empty() {
            return Err(UqError::Train(TrainError::NoTrainingPoints));
        }
        let n = xs.len();

        let mut template = MlpModel::init(spec)?;
        template.set_standardizer(Standardizer::fit(&xs, &ys));
        let (all_x, ys_std) = standardize_batch(&template, &xs, &ys);

        let mut mu = template.params_flat();
        let rho0 = bnn.init_sigma.exp_m1().ln();
        let mut rho = vec![rho0; mu.len()];

        // Flat Adam over [mu, rho].
        let mut opt = FlatAdam::new(mu.len());
        let batch_size = config.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let ramp_epochs = ((config.epochs as f64 * bnn.kl_anneal_frac).ceil() as usize).max(1);
        let mut loss_history = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            let kl_weight =
                bnn.kl_weight * (((epoch + 1) as f64 / ramp_epochs as f64).min(1.0));
            order.shuffle(rng);
            let mut epoch_elbo = 0.0;
            let mut epoch_points = 0usize;
            for chunk in order.chunks(batch_size) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| all_x.row(i).to_vec()).collect();
                let by: Vec<f64> = chunk.iter().map(|&i| ys_std[i]).collect();
                let bx = Mat::from_rows(&rows);
                let step = elbo_step(
                    &mut template,
                    &mu,
                    &rho,
                    &bx,
                    &by,
                    bnn.prior_std,
                    n,
                    kl_weight,
                    rng,
                );
                if !step.loss.is_finite() {
                    return Err(UqError::Train(TrainError::Diverged { epoch }));
                }
                // Track the un-annealed objective so epochs are comparable.
                let full = step.nll + bnn.kl_weight * step.kl / n as f64;
                epoch_elbo += full * chunk.len() as f64;
                epoch_points += chunk.len();
                opt.update(&mut mu, &mut rho, &step, config.learning_rate);
            }
            loss_history.push(epoch_elbo / epoch_points as f64);
        }

        Ok(Self {
            template,
            mu,
            rho,
            prior_std: bnn.prior_std,
            samples: bnn.samples,
            loss_history,
        })
    }

    /// Per-epoch mean of the full (un-annealed) ELBO loss during training.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    pub fn n_params(&self) -> usize {
        self.mu.len()
    }

    /// Posterior std of every parameter.
    pub fn posterior_sigmas(&self) -> Vec<f64> {
        self.rho.iter().map(|r| softplus(*r).max(SIGMA_FLOOR)).collect()
    }

    pub fn predict_decomposed(
        &self,
        x: &[f64],
        rng: &mut RngStream,
    ) -> Result<UncertaintyDecomposition, PredictError> {
        let mut net = self.template.clone();
        let n_params = self.mu.len();
        let mut w = vec![0.0; n_params];
        let mut preds = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            for i in 0..n_params {
                let sigma = softplus(self.rho[i]).max(SIGMA_FLOOR);
                w[i] = self.mu[i] + sigma * rng.standard_normal();
            }
            net.set_params_flat(&w);
            preds.push(net.predict(x)?);
        }
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

impl Predictor for BnnPredictor {
    fn dim(&self) -> usize {
        self.template.spec().input_dim()
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

struct FlatAdam {
    m_mu: Vec<f64>,
    v_mu: Vec<f64>,
    m_rho: Vec<f64>,
    v_rho: Vec<f64>,
    step: u64,
}

impl FlatAdam {
    fn new(n: usize) -> Self {
        Self {
            m_mu: vec![0.0; n],
            v_mu: vec![0.0; n],
            m_rho: vec![0.0; n],
            v_rho: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, mu: &mut [f64], rho: &mut [f64], grads: &ElboStep, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step as i32);
        let c2 = 1.0 - B2.powi(self.step as i32);
        for i in 0..mu.len() {
            let g = grads.grad_mu[i];
            self.m_mu[i] = B1 * self.m_mu[i] + (1.0 - B1) * g;
            self.v_mu[i] = B2 * self.v_mu[i] + (1.0 - B2) * g * g;
            mu[i] -= lr * (self.m_mu[i] / c1) / ((self.v_mu[i] / c2).sqrt() + EPS);
            let g = grads.grad_rho[i];
            self.m_rho[i] = B1 * self.m_rho[i] + (1.0 - B1) * g;
            self.v_rho[i] = B2 * self.v_rho[i] + (1.0 - B2) * g * g;
            rho[i] -= lr * (self.m_rho[i] / c1) / ((self.v_rho[i] / c2).sqrt() + EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        assert_eq!(gaussian_kl(0.0, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(gaussian_kl(0.7, 0.3, 0.7, 0.3), 0.0);
    }

    #[test]
    fn kl_closed_form_value() {
        // KL(N(0,1) || N(0,4)) = log 2 + 1/8 - 1/2.
        let expected = 2.0_f64.ln() + 0.125 - 0.5;
        let got = gaussian_kl(0.0, 1.0, 0.0, 2.0);
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.31815).abs() < 1e-5);
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        let cases = [(0.3, 0.8, -0.2, 1.5), (1.0, 0.4, 0.0, 1.0)];
        let mut rng = RngStream::new(31);
        for (mu_q, sigma_q, mu_p, sigma_p) in cases {
            let closed = gaussian_kl(mu_q, sigma_q, mu_p, sigma_p);
            let n = 1_000_000usize;
            let mut acc = 0.0;
            for _ in 0..n {
                let w = mu_q + sigma_q * rng.standard_normal();
                let lq = -((w - mu_q) / sigma_q).powi(2) / 2.0 - sigma_q.ln();
                let lp = -((w - mu_p) / sigma_p).powi(2) / 2.0 - sigma_p.ln();
                acc += lq - lp;
            }
            let mc = acc / n as f64;
            assert!(
                (closed - mc).abs() / closed.abs() < 0.01,
                "closed {closed} vs mc {mc}"
            );
        }
    }

    fn small_spec(seed: u64) -> MlpSpec {
        MlpSpec::new(1, &[8, 8], Activation::Tanh, 0.0, seed).unwrap()
    }

    fn sine_data(n: usize) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64 * 6.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin()).collect();
        Dataset::all_train(xs, ys).unwrap()
    }

    #[test]
    fn elbo_step_kl_vanishes_when_posterior_equals_prior() {
        let spec = small_spec(1);
        let mut net = MlpModel::init(&spec).unwrap();
        let n = net.n_params();
        let prior_std = 0.9_f64;
        let mu = vec![0.0; n];
        let rho = vec![prior_std.exp_m1().ln(); n];
        let bx = Mat::from_rows(&[vec![0.5]]);
        let step = elbo_step(
            &mut net,
            &mu,
            &rho,
            &bx,
            &[0.2],
            prior_std,
            10,
            1.0,
            &mut RngStream::new(2),
        );
        assert!(step.kl.abs() < 1e-10, "kl {}", step.kl);
    }

    #[test]
    fn training_elbo_decreases_and_stays_finite() {
        let spec = small_spec(4);
        let config = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            epochs: 120,
            ..TrainConfig::default()
        };
        let bnn = BnnConfig::default();
        let data = sine_data(64);
        let model = BnnPredictor::fit(&spec, &config, &bnn, &data, &mut RngStream::new(6)).unwrap();
        let history = model.loss_history();
        assert_eq!(history.len(), 120);
        assert!(history.iter().all(|l| l.is_finite()));
        assert!(
            history[history.len() - 1] < history[0],
            "elbo loss did not improve: {} -> {}",
            history[0],
            history[history.len() - 1]
        );
    }

    #[test]
    fn degenerate_posterior_collapses_to_deterministic_net() {
        let spec = small_spec(8);
        let mut net = MlpModel::init(&spec).unwrap();
        net.set_standardizer(Standardizer::identity(1));
        let mu = net.params_flat();
        let model = BnnPredictor {
            template: net.clone(),
            mu: mu.clone(),
            rho: vec![-40.0; mu.len()],
            prior_std: 1.0,
            samples: 50,
            loss_history: vec![],
        };
        let d = model
            .predict_decomposed(&[0.3], &mut RngStream::new(1))
            .unwrap();
        assert!(d.epistemic_var < 1e-20);
        net.set_params_flat(&mu);
        let deterministic = net.predict(&[0.3]).unwrap();
        assert!((d.mean - deterministic.mean).abs() < 1e-9);
    }

    #[test]
    fn prediction_stable_across_streams_at_many_samples() {
        let spec = small_spec(3);
        let config = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            epochs: 40,
            ..TrainConfig::default()
        };
        let bnn = BnnConfig {
            samples: 10_000,
            ..BnnConfig::default()
        };
        let data = sine_data(48);
        let model = BnnPredictor::fit(&spec, &config, &bnn, &data, &mut RngStream::new(9)).unwrap();
        let a = model
            .predict_decomposed(&[2.0], &mut RngStream::with_stream(100, 0))
            .unwrap();
        let b = model
            .predict_decomposed(&[2.0], &mut RngStream::with_stream(100, 1))
            .unwrap();
        let se = ((a.epistemic_var + b.epistemic_var) / 10_000.0).sqrt();
        assert!(
            (a.mean - b.mean).abs() <= 3.0 * se.max(1e-12),
            "{} vs {} (se {se})",
            a.mean,
            b.mean
        );
    }

    #[test]
    fn interval_uses_the_gaussian_quantile() {
        let spec = small_spec(5);
        let config = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            epochs: 10,
            ..TrainConfig::default()
        };
        let data = sine_data(32);
        let model =
            BnnPredictor::fit(&spec, &config, &BnnConfig::default(), &data, &mut RngStream::new(2))
                .unwrap();
        let mut rng_a = RngStream::with_stream(7, 1);
        let mut rng_b = RngStream::with_stream(7, 1);
        let pred = model.predict_gaussian(&[1.0], &mut rng_a).unwrap();
        let interval = model
            .predict_interval(&[1.0], ConfidenceLevel::ninety_five(), &mut rng_b)
            .unwrap();
        assert!((interval.half_width() - 1.959964 * pred.std).abs() < 1e-6 * pred.std);
    }
}
