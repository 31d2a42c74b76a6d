//! From-scratch dense neural-network engine: batched forward and reverse
//! passes, inverted dropout, a two-output Gaussian head trained by NLL with
//! Adam, and k-fold cross-validation.

pub(crate) mod math;
pub(crate) mod mlp;
pub(crate) mod train;

pub use mlp::{
    softplus, Activation, MlpModel, MlpSpec, NeuralError, Standardizer, WeightInit, STD_FLOOR,
};
pub use train::{
    batch_gradients, batch_loss, gaussian_nll, kfold_cross_validate, train, train_points,
    validation_loss, Gradients, KFoldResult, Loss, Optimizer, TrainConfig, TrainError,
};
