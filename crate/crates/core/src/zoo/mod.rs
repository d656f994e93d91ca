//! Reconstruction autoencoders and their training loop.

mod config;
mod model;
mod train;

pub use config::{
    Arch, ModelConfig, TrainConfig, CNN_CHANNELS, CNN_KERNEL, CNN_STRIDE, DEFAULT_CHUNK, RECURRENT_HIDDEN,
    TRANSFORMER_EMBEDDING, TRANSFORMER_FFN, TRANSFORMER_HEADS,
};
pub use model::{Autoencoder, EVAL_BATCH};
pub use train::{
    evaluate_mse, train, train_with_progress, validation_split, EarlyStopping, EpochLoss, StopDecision,
    TrainedModel,
};
