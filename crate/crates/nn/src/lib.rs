//! From-scratch differentiable kernels and the convolutional autoencoder
//! built on them: 2-D convolution and its transpose, SELU, batch
//! normalization, dropout; rectified Adam with lookahead under a flat-cosine
//! schedule; noise-imputation training with masked losses and the
//! regularization grid search.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod tune;

pub use checkpoint::{load_params, save_params};
pub use error::{NnError, Result};
pub use layers::{Layer, Phase};
pub use model::{build_model, enumerate_configs, positional_encoding, AutoencoderConfig, ModelInstance};
pub use optim::{schedule_value, OptimizerParams, OptimizerState};
pub use tensor::Tensor;
pub use train::{
    impute_noise, make_example, masked_distance, train_model, DatasetRef, Norm, NoiseParams,
    TrainHyper, TrainOutcome,
};
pub use tune::{tune_regularization, TuneStatus, TuningState};
