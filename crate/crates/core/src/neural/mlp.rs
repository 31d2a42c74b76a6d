//! Dense multi-layer perceptron with a two-output Gaussian head.
//!
//! The head emits `(mu, s_raw)`; the predictive standard deviation is
//! `softplus(s_raw) + 1e-6`. Dropout is inverted: surviving units are scaled
//! by `1/(1-p)` so the expected activation is unchanged.

use serde::{Deserialize, Serialize};

use super::math::{matmul_nt, Mat};
use crate::predict::{check_dim, GaussianPrediction, PredictError};
use crate::rng::RngStream;

/// Floor added to the softplus std head to keep the NLL away from zero.
pub const STD_FLOOR: f64 = 1e-6;

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("layer widths must be [input, hidden..., 2] with >= 1 hidden layer, got {0:?}")]
    BadArchitecture(String),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("model document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    pub(crate) fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Weight initialization scheme; scaled-uniform fans matched to the
/// activation (He for ReLU, Glorot for tanh).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    HeUniform,
    GlorotUniform,
}

impl WeightInit {
    pub fn for_activation(activation: Activation) -> Self {
        match activation {
            Activation::Relu => WeightInit::HeUniform,
            Activation::Tanh => WeightInit::GlorotUniform,
        }
    }

    fn limit(&self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            WeightInit::HeUniform => (6.0 / fan_in as f64).sqrt(),
            WeightInit::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

/// Architecture and initialization of an MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, two-output head last.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub init: WeightInit,
    pub seed: u64,
}

impl MlpSpec {
    /// Spec with `[input, hidden..., 2]` widths and the init scheme matched
    /// to the activation.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        dropout: f64,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        let mut layer_widths = Vec::with_capacity(hidden.len() + 2);
        layer_widths.push(input_dim);
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(2);
        let spec = Self {
            layer_widths,
            activation,
            dropout,
            init: WeightInit::for_activation(activation),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let w = &self.layer_widths;
        if w.len() < 3 || w.iter().any(|&n| n == 0) || *w.last().unwrap() != 2 {
            return Err(NeuralError::BadArchitecture(format!("{w:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NeuralError::BadDropout(self.dropout));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// Number of weight layers.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Affine input/target scaling fitted on training statistics.
///
/// Round-trip identity: destandardizing a standardized value recovers it
/// exactly up to floating-point rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; dim],
            x_std: vec![1.0; dim],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    /// Z-score statistics from the given points; zero spreads fall back to 1
    /// so constant features stay finite.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Self {
        let mut s = Self::fit_scale_only(xs, ys);
        let n = ys.len() as f64;
        s.y_mean = ys.iter().sum::<f64>() / n;
        let y_var = ys.iter().map(|y| (y - s.y_mean).powi(2)).sum::<f64>() / n;
        s.y_std = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };
        s
    }

    /// Standardize inputs but only scale targets (no mean shift); used when
    /// the target must remain non-negative, e.g. residual magnitudes.
    pub fn fit_scale_only(xs: &[Vec<f64>], ys: &[f64]) -> Self {
        let n = xs.len() as f64;
        let dim = xs[0].len();
        let mut x_mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in x_mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut x_std = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in x_std.iter_mut().zip(x).zip(&x_mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut x_std {
            *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
        }
        let y_rms = (ys.iter().map(|y| y * y).sum::<f64>() / n).sqrt();
        Self {
            x_mean,
            x_std,
            y_mean: 0.0,
            y_std: if y_rms > 1e-12 { y_rms } else { 1.0 },
        }
    }

    pub fn standardize_x(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.x_mean[i]) / self.x_std[i];
        }
    }

    pub fn standardize_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn destandardize_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    /// Map a standardized (mean, std) prediction back to original units.
    pub fn destandardize_pred(&self, mean: f64, std: f64) -> (f64, f64) {
        (self.destandardize_y(mean), std * self.y_std)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A dense network: per-layer weight matrices `[out, in]` and bias vectors,
/// plus the input/target scaling fitted during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) spec: MlpSpec,
    pub(crate) weights: Vec<Mat>,
    pub(crate) biases: Vec<Vec<f64>>,
    pub(crate) standardizer: Standardizer,
}

impl MlpModel {
    /// Initialize weights from the spec's seed; biases start at zero and the
    /// standardizer starts as the identity.
    pub fn init(spec: &MlpSpec) -> Result<Self, NeuralError> {
        spec.validate()?;
        let mut rng = RngStream::with_stream(spec.seed, 0x1217);
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let fan_in = spec.layer_widths[l];
            let fan_out = spec.layer_widths[l + 1];
            let limit = spec.init.limit(fan_in, fan_out);
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in &mut w.data {
                *v = rng.uniform(-limit, limit);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            spec: spec.clone(),
            weights,
            biases,
            standardizer: Standardizer::identity(spec.input_dim()),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub(crate) fn set_standardizer(&mut self, s: Standardizer) {
        self.standardizer = s;
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let nw = w.data.len();
            w.data.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        assert_eq!(k, flat.len());
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data.len() + b.len())
            .sum()
    }

    /// Deterministic forward pass (dropout off), in original units.
    pub fn predict(&self, x: &[f64]) -> Result<GaussianPrediction, PredictError> {
        check_dim(self.spec.input_dim(), x)?;
        Ok(self.predict_batch_internal(std::slice::from_ref(&x.to_vec()), None)[0])
    }

    /// One stochastic forward pass with dropout masks sampled from `rng`.
    pub fn predict_dropout(
        &self,
        x: &[f64],
        rng: &mut RngStream,
    ) -> Result<GaussianPrediction, PredictError> {
        Ok(self.predict_dropout_batch(x, 1, rng)?.remove(0))
    }

    /// `passes` stochastic forward passes on the same input, batched so the
    /// masked evaluations share each layer's matrix product.
    pub fn predict_dropout_batch(
        &self,
        x: &[f64],
        passes: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<GaussianPrediction>, PredictError> {
        check_dim(self.spec.input_dim(), x)?;
        let rows: Vec<Vec<f64>> = (0..passes).map(|_| x.to_vec()).collect();
        Ok(self.predict_batch_internal(&rows, Some(rng)))
    }

    /// Point prediction through the positive (softplus) channel; used by
    /// residual-scale models trained with the softplus-MSE loss.
    pub fn predict_positive(&self, x: &[f64]) -> Result<f64, PredictError> {
        check_dim(self.spec.input_dim(), x)?;
        let out = self.raw_outputs(x)?;
        let p = softplus(out.0) + STD_FLOOR;
        Ok(p * self.standardizer.y_std)
    }

    fn raw_outputs(&self, x: &[f64]) -> Result<(f64, f64), PredictError> {
        let mut xs = vec![0.0; x.len()];
        self.standardizer.standardize_x(x, &mut xs);
        let input = Mat::from_rows(&[xs]);
        let cache = self.forward_batch(&input, None);
        let out = cache.activations.last().unwrap();
        Ok((out.at(0, 0), out.at(0, 1)))
    }

    fn predict_batch_internal(
        &self,
        rows: &[Vec<f64>],
        rng: Option<&mut RngStream>,
    ) -> Vec<GaussianPrediction> {
        let std_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut out = vec![0.0; r.len()];
                self.standardizer.standardize_x(r, &mut out);
                out
            })
            .collect();
        let input = Mat::from_rows(&std_rows);
        let cache = self.forward_batch(&input, rng);
        let out = cache.activations.last().unwrap();
        (0..out.rows)
            .map(|i| {
                let mu = out.at(i, 0);
                let std = softplus(out.at(i, 1)) + STD_FLOOR;
                let (mean, std) = self.standardizer.destandardize_pred(mu, std);
                GaussianPrediction { mean, std }
            })
            .collect()
    }

    /// Batched forward pass in standardized space, keeping per-layer caches
    /// for backpropagation. `rng` enables dropout sampling on hidden layers.
    pub(crate) fn forward_batch(&self, input: &Mat, rng: Option<&mut RngStream>) -> ForwardCache {
        let n_layers = self.spec.n_layers();
        let p = self.spec.dropout;
        let mut masks: Vec<Option<Mat>> = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.clone());
        let mut rng = rng;

        for l in 0..n_layers {
            let mut z = matmul_nt(activations.last().unwrap(), &self.weights[l]);
            for i in 0..z.rows {
                let row = z.row_mut(i);
                for (v, b) in row.iter_mut().zip(&self.biases[l]) {
                    *v += b;
                }
            }
            let last = l == n_layers - 1;
            let mut a = if last {
                z.clone()
            } else {
                let mut a = z.clone();
                for v in &mut a.data {
                    *v = self.spec.activation.apply(*v);
                }
                a
            };
            let mask = if !last && p > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let keep_scale = 1.0 / (1.0 - p);
                    let mut m = Mat::zeros(a.rows, a.cols);
                    for (mv, av) in m.data.iter_mut().zip(&mut a.data) {
                        *mv = if r.uniform(0.0, 1.0) < p { 0.0 } else { keep_scale };
                        *av *= *mv;
                    }
                    Some(m)
                } else {
                    None
                }
            } else {
                None
            };
            masks.push(mask);
            pre_activations.push(z);
            activations.push(a);
        }

        ForwardCache {
            pre_activations,
            activations,
            masks,
        }
    }
}

impl crate::predict::PointPredictor for MlpModel {
    fn dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn point(&self, x: &[f64]) -> Result<f64, PredictError> {
        Ok(self.predict(x)?.mean)
    }
}

pub(crate) struct ForwardCache {
    /// `z_l` for each weight layer.
    pub pre_activations: Vec<Mat>,
    /// `a_0 = input`, then each layer's (masked) activation; last entry is
    /// the raw two-column head output.
    pub activations: Vec<Mat>,
    pub masks: Vec<Option<Mat>>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    spec: MlpSpec,
    standardizer: Standardizer,
    /// Row-major weight matrices, one per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Serialize to the versioned JSON model document.
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            standardizer: self.standardizer.clone(),
            weights: self.weights.iter().map(|w| w.data.clone()).collect(),
            biases: self.biases.clone(),
        };
        serde_json::to_string(&doc).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| NeuralError::Format(e.to_string()))?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(NeuralError::Format(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        doc.spec.validate()?;
        let mut model = MlpModel::init(&doc.spec)?;
        if doc.weights.len() != model.weights.len() || doc.biases.len() != model.biases.len() {
            return Err(NeuralError::Format("layer count mismatch".into()));
        }
        for (w, data) in model.weights.iter_mut().zip(&doc.weights) {
            if w.data.len() != data.len() {
                return Err(NeuralError::Format("weight shape mismatch".into()));
            }
            w.data.copy_from_slice(data);
        }
        for (b, data) in model.biases.iter_mut().zip(&doc.biases) {
            if b.len() != data.len() {
                return Err(NeuralError::Format("bias shape mismatch".into()));
            }
            b.copy_from_slice(data);
        }
        model.standardizer = doc.standardizer;
        Ok(model)
    }
}
